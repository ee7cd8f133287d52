"""Metropolis-Hastings sampling of latent mini-step paths.

The target is the augmented likelihood of a path given its period's start
wave and the current parameters.  Five move kinds keep the path connecting
the observed endpoints: inserting/deleting a cancelling pair of toggles of
one tie variable, inserting/deleting a no-change step, and permuting a
short segment.  Every move preserves the per-variable toggle parity, so
any path reachable from the initial one still joins the two waves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .effects import CovariateSet
from .netstate import NET_X, NET_Z, JointState, Toggle, hamming
from .process import MiniStepPath, RateSpec, _kernel_args

MOVE_NAMES = ("insert_pair", "delete_pair", "insert_diag", "delete_diag", "permute")
DEFAULT_MOVE_PROBS = (0.3, 0.3, 0.1, 0.1, 0.2)
PERMUTE_MAX_LEN = 8


def move_cum(probs=DEFAULT_MOVE_PROBS) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (5,) or abs(probs.sum() - 1.0) > 1e-9 or (probs <= 0).any():
        raise ValueError("move probabilities must be five positive numbers summing to 1")
    return np.cumsum(probs)


def default_update_count(R: int) -> int:
    """Per-sweep proposal budget, proportional to the current path length."""
    return max(20, 2 * R)


def initial_path(y0: JointState, y1: JointState, rng: np.random.Generator,
                 period: int = 0) -> MiniStepPath:
    """Minimal parity-consistent path: one toggle per differing tie variable."""
    if (y0.n, y0.h) != (y1.n, y1.h):
        raise ValueError("endpoint states have different dimensions")
    toggles = []
    xi, xj = np.nonzero(y0.x != y1.x)
    for i, j in zip(xi, xj):
        if i != j:
            toggles.append(Toggle(int(i), NET_X, int(j)))
    zi, zk = np.nonzero(y0.z != y1.z)
    for i, k in zip(zi, zk):
        toggles.append(Toggle(int(i), NET_Z, int(k)))
    order = rng.permutation(len(toggles))
    return MiniStepPath(period, [toggles[o] for o in order])


@dataclass
class PathProposal:
    kind: str
    positions: tuple
    toggle: Toggle | None
    log_hastings: float
    applicable: bool = True


def _n_vars(n: int, h: int, has_z: bool) -> int:
    return n * (n - 1) + (n * h if has_z else 0)


def _pair_count(steps: list[Toggle]) -> int:
    counts: dict[tuple, int] = {}
    for t in steps:
        if not t.diagonal:
            key = (t.network, t.actor, t.target)
            counts[key] = counts.get(key, 0) + 1
    return sum(m * (m - 1) // 2 for m in counts.values())


def propose(path: MiniStepPath, rng: np.random.Generator, n: int, h: int,
            has_z: bool | None = None,
            move_probs=DEFAULT_MOVE_PROBS) -> tuple[MiniStepPath, PathProposal]:
    """Draw one structural path move; pure-Python reference used in tests.

    Returns the candidate path and the proposal record with the exact log
    Hastings ratio.  Inapplicable moves return the input path unchanged
    with ``applicable=False`` (rejected by construction).
    """
    if has_z is None:
        has_z = h > 0
    cum = move_cum(move_probs)
    probs = np.asarray(move_probs, dtype=float)
    steps = path.steps
    R = len(steps)
    u = rng.random()
    kind = int(np.searchsorted(cum, u, side="right"))
    nvars = _n_vars(n, h, has_z)
    ndiag_opts = n * (2 if has_z else 1)

    if kind == kernels.MV_INSERT_PAIR:
        v = int(rng.integers(nvars))
        if v < n * (n - 1):
            i, r = divmod(v, n - 1)
            t = Toggle(i, NET_X, r if r < i else r + 1)
        else:
            i, k = divmod(v - n * (n - 1), h)
            t = Toggle(i, NET_Z, k)
        a, b = sorted(rng.choice(R + 2, size=2, replace=False).tolist())
        new = steps[:a] + [t] + steps[a:b - 1] + [t] + steps[b - 1:]
        ndel_new = _pair_count(new)
        npairs = (R + 2) * (R + 1) / 2
        lh = (math.log(probs[1]) - math.log(ndel_new)
              - math.log(probs[0]) + math.log(nvars) + math.log(npairs))
        return MiniStepPath(path.period, new), PathProposal("insert_pair", (a, b), t, lh)

    if kind == kernels.MV_DELETE_PAIR:
        pairs = []
        for r1 in range(R):
            if steps[r1].diagonal:
                continue
            for r2 in range(r1 + 1, R):
                if steps[r1] == steps[r2]:
                    pairs.append((r1, r2))
        if not pairs:
            return path, PathProposal("delete_pair", (), None, 0.0, applicable=False)
        ndel = len(pairs)
        r1, r2 = pairs[int(rng.integers(ndel))]
        new = steps[:r1] + steps[r1 + 1:r2] + steps[r2 + 1:]
        npairs = R * (R - 1) / 2
        lh = (math.log(probs[0]) - math.log(nvars) - math.log(npairs)
              - math.log(probs[1]) + math.log(ndel))
        return MiniStepPath(path.period, new), PathProposal("delete_pair", (r1, r2), steps[r1], lh)

    if kind == kernels.MV_INSERT_DIAG:
        pick = int(rng.integers(ndiag_opts))
        t = Toggle(pick % n, NET_X if pick < n else NET_Z, None)
        a = int(rng.integers(R + 1))
        new = steps[:a] + [t] + steps[a:]
        ndiag_new = sum(1 for s in new if s.diagonal)
        lh = (math.log(probs[3]) - math.log(ndiag_new)
              - math.log(probs[2]) + math.log(ndiag_opts) + math.log(R + 1))
        return MiniStepPath(path.period, new), PathProposal("insert_diag", (a,), t, lh)

    if kind == kernels.MV_DELETE_DIAG:
        diag_pos = [r for r, s in enumerate(steps) if s.diagonal]
        if not diag_pos:
            return path, PathProposal("delete_diag", (), None, 0.0, applicable=False)
        a = diag_pos[int(rng.integers(len(diag_pos)))]
        new = steps[:a] + steps[a + 1:]
        lh = (math.log(probs[2]) - math.log(ndiag_opts) - math.log(R)
              - math.log(probs[3]) + math.log(len(diag_pos)))
        return MiniStepPath(path.period, new), PathProposal("delete_diag", (a,), steps[a], lh)

    # permute a short segment; symmetric proposal
    if R < 2:
        return path, PathProposal("permute", (), None, 0.0, applicable=False)
    lmax = min(PERMUTE_MAX_LEN, R)
    L = int(rng.integers(2, lmax + 1))
    a = int(rng.integers(R - L + 1))
    perm = rng.permutation(L)
    new = steps[:a] + [steps[a + p] for p in perm] + steps[a + L:]
    return MiniStepPath(path.period, new), PathProposal("permute", (a, L), None, 0.0)


class PathWork:
    """Mutable array workspace for one (group, period) path."""

    def __init__(self, y0: JointState, path: MiniStepPath, capacity: int | None = None):
        self.n, self.h = y0.n, y0.h
        self.x0 = np.ascontiguousarray(y0.x, dtype=np.uint8)
        self.z0 = np.ascontiguousarray(y0.z, dtype=np.uint8)
        self.period = path.period
        R = path.R
        cap = max(capacity or 0, 4 * R + 64)
        self.steps = path.to_arrays(cap)
        self.codes = np.full(cap, -1, dtype=np.int64)
        for r in range(R):
            self.codes[r] = self._code(self.steps[r])
        self.logps = np.zeros(cap, dtype=np.float64)
        self.R = R
        self.buckets = np.zeros(self.n * self.n + self.n * self.h, dtype=np.int64)
        self.npairs = np.zeros(1, dtype=np.int64)
        self.npairs[0] = kernels._count_pairs(self.codes, R, self.buckets)
        self.sx = np.empty_like(self.x0)
        self.sz = np.empty_like(self.z0)
        self.buf = np.empty(max(self.n, self.h + 1) + 1, dtype=np.float64)
        self.tmp = np.empty(cap + 4 * PERMUTE_MAX_LEN, dtype=np.float64)
        self.counters = np.zeros(11, dtype=np.int64)

    def _code(self, row) -> int:
        if row[2] < 0:
            return -1
        if row[0] == 0:
            return int(row[1]) * self.n + int(row[2])
        return self.n * self.n + int(row[1]) * self.h + int(row[2])

    def grow(self):
        cap = self.steps.shape[0] * 2
        steps = np.full((cap, 3), -1, dtype=np.int64)
        steps[:self.R] = self.steps[:self.R]
        codes = np.full(cap, -1, dtype=np.int64)
        codes[:self.R] = self.codes[:self.R]
        logps = np.zeros(cap, dtype=np.float64)
        logps[:self.R] = self.logps[:self.R]
        self.steps, self.codes, self.logps = steps, codes, logps
        self.tmp = np.empty(cap + 4 * PERMUTE_MAX_LEN, dtype=np.float64)

    def refresh_logps(self, kargs, lam_x: float, lam_z: float, T: float) -> float:
        """Recompute the per-step log probabilities and the total under kargs."""
        self.sx[:] = self.x0
        self.sz[:] = self.z0
        total = kernels.replay_logp(self.sx, self.sz, self.steps, self.R, *kargs,
                                    lam_x, lam_z, T, self.buf, self.logps)
        return float(total)

    def total_logp(self, lam_x: float, lam_z: float, T: float) -> float:
        """Assemble the full augmented log likelihood from cached step terms."""
        n = self.n
        lam_pp = n * (lam_x + lam_z)
        R = self.R
        total = -lam_pp * T
        if R:
            total += R * math.log(lam_pp * T) - math.lgamma(R + 1.0)
            nz = int((self.steps[:R, 0] == 1).sum())
            nx = R - nz
            if nx:
                total += nx * (math.log(lam_x / (lam_x + lam_z)) - math.log(n))
            if nz:
                total += nz * (math.log(lam_z / (lam_x + lam_z)) - math.log(n))
            total += float(self.logps[:R].sum())
        return total

    def sweep(self, kargs, lam_x: float, lam_z: float, T: float, has_z: bool,
              gen: np.random.Generator, n_updates: int,
              move_probs=DEFAULT_MOVE_PROBS, skip: bool = True) -> dict:
        cum = move_cum(move_probs)
        skip_flags = kernels.skip_flags_for(kargs[0], kargs[5]) if skip else -1
        remaining = n_updates
        prop = np.zeros(5, dtype=np.int64)
        acc = np.zeros(5, dtype=np.int64)
        while remaining > 0:
            self.counters[:] = 0
            res = kernels.path_sweep(
                self.x0, self.z0, self.steps, self.codes, self.logps, self.R,
                remaining, cum, *kargs, lam_x, lam_z, T, 1 if has_z else 0,
                skip_flags, gen, self.sx, self.sz, self.buf, self.tmp,
                self.buckets, self.npairs, self.counters)
            prop += self.counters[:5]
            acc += self.counters[5:10]
            if res < 0:
                self.R = -res - 1
                remaining = int(self.counters[10])
                self.grow()
            else:
                self.R = int(res)
                remaining = 0
        return {"proposed": prop, "accepted": acc}

    def to_path(self) -> MiniStepPath:
        return MiniStepPath.from_arrays(self.steps, self.R, self.period)

    def replay_endpoint(self) -> JointState:
        out = JointState(self.n, self.h, self.x0, self.z0)
        return self.to_path().replay(out)


def mh_sweep(path: MiniStepPath, y0: JointState, rates: RateSpec, theta,
             cov: CovariateSet, rng: np.random.Generator, n_updates: int,
             T: float = 1.0, move_probs=DEFAULT_MOVE_PROBS,
             check: bool = False) -> MiniStepPath:
    """Run ``n_updates`` propose/accept cycles on one path and return the result."""
    work = PathWork(y0, path)
    lam_x, lam_z = rates.lam_pair(path.period)
    has_z = y0.h > 0 and lam_z > 0
    kargs = _kernel_args(theta, cov, y0.n, y0.h)
    work.refresh_logps(kargs, lam_x, lam_z, T)
    if n_updates > 0:
        work.sweep(kargs, lam_x, lam_z, T, has_z, rng, n_updates, move_probs)
    out = work.to_path()
    if check:
        end_before = path.replay(y0)
        end_after = out.replay(y0)
        if end_before != end_after:
            raise AssertionError("path sweep broke endpoint parity")
    return out
