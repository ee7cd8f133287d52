"""The continuous-time mini-step process: rates, choices, simulation, likelihoods.

An actor gets change opportunities at a constant per-network rate; given an
opportunity it picks one outcome from its option set (every single-tie
toggle plus "no change") with multinomial-logit probabilities driven by the
evaluation function.  The augmented likelihood of a recorded mini-step
sequence marginalises the holding times; the exact likelihood exponentiates
the generator of the induced Markov chain and is only feasible for tiny
state spaces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import kernels
from .effects import CovariateSet, ModelSpec, change_vector
from .netstate import NET_X, NET_Z, JointState, Toggle, apply_toggle


@dataclass
class RateSpec:
    """Constant per-period change-opportunity rates, one per network."""

    rates: dict[tuple[str, int], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, lam in self.rates.items():
            if lam <= 0:
                raise ValueError(f"rate {key} must be strictly positive, got {lam}")

    @classmethod
    def constant(cls, lam_x: float, lam_z: float | None = None, periods: int = 1) -> "RateSpec":
        rates = {(NET_X, m): lam_x for m in range(periods)}
        if lam_z is not None:
            rates.update({(NET_Z, m): lam_z for m in range(periods)})
        return cls(rates)

    def lam(self, network: str, period: int = 0) -> float:
        return self.rates.get((network, period), 0.0)

    def lam_pair(self, period: int = 0) -> tuple[float, float]:
        return self.lam(NET_X, period), self.lam(NET_Z, period)

    def total(self, n: int, period: int = 0) -> float:
        """Aggregate opportunity rate over all actors and networks."""
        lx, lz = self.lam_pair(period)
        return n * (lx + lz)


@dataclass
class MiniStepPath:
    """Ordered latent mini-step outcomes connecting two waves of one period."""

    period: int
    steps: list[Toggle] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def R(self) -> int:
        return len(self.steps)

    def replay(self, y0: JointState) -> JointState:
        out = y0.copy()
        for t in self.steps:
            out.toggle(t)
        return out

    def to_arrays(self, cap: int | None = None):
        cap = max(cap or 0, len(self.steps))
        arr = np.full((cap, 3), -1, dtype=np.int64)
        for r, t in enumerate(self.steps):
            arr[r, 0] = 0 if t.network == NET_X else 1
            arr[r, 1] = t.actor
            arr[r, 2] = -1 if t.target is None else t.target
        return arr

    @classmethod
    def from_arrays(cls, steps: np.ndarray, R: int, period: int = 0) -> "MiniStepPath":
        toggles = []
        for r in range(R):
            net = NET_X if steps[r, 0] == 0 else NET_Z
            tgt = None if steps[r, 2] < 0 else int(steps[r, 2])
            toggles.append(Toggle(int(steps[r, 1]), net, tgt))
        return cls(period, toggles)


def _theta_split(theta):
    """Split a coefficient map into per-network effect lists and arrays."""
    x_effects, x_coefs, z_effects, z_coefs = [], [], [], []
    for eff, coef in theta.items():
        if eff.dependent_network == NET_X:
            x_effects.append(eff)
            x_coefs.append(float(coef))
        else:
            z_effects.append(eff)
            z_coefs.append(float(coef))
    model = ModelSpec(x_effects, z_effects)
    return model, np.asarray(x_coefs), np.asarray(z_coefs)


def _kernel_args(theta, cov: CovariateSet, n: int, h: int):
    model, tx, tz = _theta_split(theta)
    tab = kernels.build_tables(model, cov, n, h)
    return (tab.kinds_x, tab.cov_x, tab.aux1_x, tab.aux2_x, tx,
            tab.kinds_z, tab.cov_z, tab.aux1_z, tab.aux2_z, tz,
            tab.covmat, tab.logn, tab.zbar)


def actor_selection_prob(rates: RateSpec, n: int, i: int, network: str, period: int = 0) -> float:
    """Probability that actor i is the one to move, in the given network."""
    if not 0 <= i < n:
        raise IndexError(f"actor {i} out of range")
    lam = rates.lam(network, period)
    total = rates.total(n, period)
    if total <= 0:
        raise ValueError("no positive rates in this period")
    return lam / total


def option_set(state: JointState, i: int, network: str) -> list[Toggle]:
    """All outcomes reachable in one mini-step; no-change comes last."""
    if network == NET_X:
        opts = [Toggle(i, NET_X, j) for j in range(state.n) if j != i]
    else:
        opts = [Toggle(i, NET_Z, k) for k in range(state.h)]
    opts.append(Toggle(i, network, None))
    return opts


def choice_distribution(theta, state: JointState, cov: CovariateSet, i: int, network: str):
    """Option set and multinomial-logit probabilities for one opportunity.

    Coefficients for the other network are ignored, so the full coefficient
    map of a two-network model can be passed directly.
    """
    theta = {eff: c for eff, c in theta.items() if eff.dependent_network == network}
    vec = change_vector(theta, state, cov, i, network)
    if network == NET_X:
        scores = np.concatenate([vec[:i], vec[i + 1:state.n], [0.0]])
    else:
        scores = vec  # already has the no-change slot last
    scores = scores - scores.max()
    probs = np.exp(scores)
    probs /= probs.sum()
    return option_set(state, i, network), probs


def simulate_period(y0: JointState, rates: RateSpec, theta, cov: CovariateSet,
                    rng: np.random.Generator, T: float = 1.0, period: int = 0):
    """Run the process for one period; returns the end state and the path."""
    if T <= 0:
        raise ValueError("period duration must be positive")
    n, h = y0.n, y0.h
    lx, lz = rates.lam_pair(period)
    R = int(rng.poisson(rates.total(n, period) * T))
    steps = np.full((max(R, 1), 3), -1, dtype=np.int64)
    x = y0.x.copy()
    z = y0.z.copy()
    args = _kernel_args(theta, cov, n, h)
    buf = np.empty(max(n, h + 1) + 1, dtype=np.float64)
    if R > 0:
        kernels.simulate_steps(x, z, R, steps, *args[:10], args[10], args[11], args[12],
                               lx, lz, rng, buf)
    end = JointState(n, h, x, z)
    return end, MiniStepPath.from_arrays(steps, R, period)


def log_p_aug(path: MiniStepPath, y0: JointState, rates: RateSpec, theta,
              cov: CovariateSet, T: float = 1.0, y1: JointState | None = None) -> float:
    """Log augmented likelihood of one period's mini-step sequence."""
    n, h = y0.n, y0.h
    lx, lz = rates.lam_pair(path.period)
    for t in path.steps:
        if t.network == NET_Z and h == 0:
            raise ValueError("two-mode toggle in a path for a one-mode-only state")
        if not t.diagonal:
            hi = n if t.network == NET_X else h
            if not (0 <= t.actor < n and 0 <= t.target < hi):
                raise ValueError(f"toggle out of range: {t}")
    steps = path.to_arrays()
    R = path.R
    x = y0.x.copy()
    z = y0.z.copy()
    args = _kernel_args(theta, cov, n, h)
    buf = np.empty(max(n, h + 1) + 1, dtype=np.float64)
    logps = np.empty(max(R, 1), dtype=np.float64)
    total = kernels.replay_logp(x, z, steps, R, *args[:10], args[10], args[11], args[12],
                                lx, lz, T, buf, logps)
    if y1 is not None:
        if not (np.array_equal(x, y1.x) and np.array_equal(z, y1.z)):
            raise ValueError("path endpoint does not match the stated end state (parity violation)")
    return float(total)


def log_p_aug_multi(paths, y0_list, rates: RateSpec, theta, cov: CovariateSet, T: float = 1.0) -> float:
    """Sum of per-period augmented log likelihoods."""
    return sum(log_p_aug(p, y0, rates, theta, cov, T) for p, y0 in zip(paths, y0_list))


# ---------------------------------------------------------------------------
# Exact likelihood on enumerable state spaces (test oracle, small cases only)

def n_tie_variables(n: int, h: int) -> int:
    return n * (n - 1) + n * h


def state_to_index(state: JointState) -> int:
    idx = 0
    bit = 0
    for i in range(state.n):
        for j in range(state.n):
            if i == j:
                continue
            if state.x[i, j]:
                idx |= 1 << bit
            bit += 1
    for i in range(state.n):
        for k in range(state.h):
            if state.z[i, k]:
                idx |= 1 << bit
            bit += 1
    return idx


def index_to_state(idx: int, n: int, h: int) -> JointState:
    x = np.zeros((n, n), dtype=np.uint8)
    z = np.zeros((n, h), dtype=np.uint8)
    bit = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            x[i, j] = (idx >> bit) & 1
            bit += 1
    for i in range(n):
        for k in range(h):
            z[i, k] = (idx >> bit) & 1
            bit += 1
    return JointState(n, h, x, z)


def build_generator(n: int, h: int, rates: RateSpec, theta, cov: CovariateSet,
                    period: int = 0) -> scipy.sparse.csr_matrix:
    """Sparse intensity matrix of the joint chain over all 2^K states."""
    nv = n_tie_variables(n, h)
    if nv > 20:
        raise ValueError(f"state space too large: {nv} tie variables")
    size = 1 << nv
    lx, lz = rates.lam_pair(period)
    networks = [NET_X] + ([NET_Z] if h > 0 and lz > 0 else [])
    rows, cols, vals = [], [], []
    for s in range(size):
        state = index_to_state(s, n, h)
        diag = 0.0
        for i in range(n):
            for net in networks:
                lam = lx if net == NET_X else lz
                opts, probs = choice_distribution(theta, state, cov, i, net)
                for t, p in zip(opts, probs):
                    if t.diagonal:
                        continue
                    s2 = state_to_index(apply_toggle(state, t))
                    rows.append(s)
                    cols.append(s2)
                    vals.append(lam * p)
                    diag -= lam * p
        rows.append(s)
        cols.append(s)
        vals.append(diag)
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))


def exact_loglik(y0: JointState, y1: JointState, rates: RateSpec, theta,
                 cov: CovariateSet, T: float = 1.0, period: int = 0) -> float:
    """Log of the (y0, y1) entry of exp(T Q); only for tiny state spaces."""
    n, h = y0.n, y0.h
    if (y1.n, y1.h) != (n, h):
        raise ValueError("end state has different dimensions")
    Q = build_generator(n, h, rates, theta, cov, period)
    i0, i1 = state_to_index(y0), state_to_index(y1)
    size = Q.shape[0]
    if size <= 4096:
        P = scipy.linalg.expm(T * Q.toarray())
        p = P[i0, i1]
    else:
        e0 = np.zeros(size)
        e0[i0] = 1.0
        row = scipy.sparse.linalg.expm_multiply(T * Q.T.tocsc(), e0)
        p = row[i1]
    if p <= 0:
        return -np.inf
    return float(np.log(p))


def transition_matrix(y0s_n: int, h: int, rates: RateSpec, theta, cov: CovariateSet,
                      period: int = 0) -> np.ndarray:
    """One-mini-step transition matrix over all states (includes no-change mass)."""
    nv = n_tie_variables(y0s_n, h)
    if nv > 14:
        raise ValueError("state space too large for a dense mini-step matrix")
    n = y0s_n
    size = 1 << nv
    lx, lz = rates.lam_pair(period)
    lam_sum = lx + lz
    M = np.zeros((size, size))
    networks = [NET_X] + ([NET_Z] if h > 0 and lz > 0 else [])
    for s in range(size):
        state = index_to_state(s, n, h)
        for i in range(n):
            for net in networks:
                lam = lx if net == NET_X else lz
                w = lam / (n * lam_sum)
                opts, probs = choice_distribution(theta, state, cov, i, net)
                for t, p in zip(opts, probs):
                    s2 = s if t.diagonal else state_to_index(apply_toggle(state, t))
                    M[s, s2] += w * p
    return M
