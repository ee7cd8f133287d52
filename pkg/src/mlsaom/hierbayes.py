"""Hierarchical random-coefficient model and its MCMC scheme.

Group-varying coefficients (always including the rate parameters) follow a
multivariate normal N(mu, Sigma) truncated to positive rates; (mu, Sigma)
carry a Normal-Inverse-Wishart prior or one of the two Jeffreys reference
limits.  One MCMC step updates, in order: the latent mini-step paths of
every group, each group's varying coefficients by random-walk MH, the
constant coefficients by five MH updates alternating a direct random walk
with a joint additive shift of all coefficient vectors, and finally mu and
Sigma by conjugate Gibbs draws.  Proposal scales adapt toward a 25%
acceptance rate during warmup and stay frozen afterwards.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.stats

from . import kernels
from .dataio import PanelDataset
from .effects import CovariateSet, ModelSpec, statistic_total
from .netstate import NET_X, NET_Z, JointState, hamming
from .pathsampler import PathWork, initial_path, move_cum
from .process import RateSpec


class NumericalError(RuntimeError):
    """Non-finite quantities during estimation (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Parameter layout

class ParameterIndex:
    """Maps the gamma/eta partition onto effect lists and rate parameters.

    gamma = [rates (network-major, period-minor), varying effects in model
    order]; eta = [constant effects in model order].
    """

    def __init__(self, model: ModelSpec, n_periods: int, has_z: bool | None = None):
        if n_periods < 1:
            raise ValueError("need at least one period")
        if has_z is None:
            has_z = model.has_z
        self.model = model
        self.n_periods = n_periods
        self.has_z = has_z
        self.rate_keys = [(NET_X, m) for m in range(n_periods)]
        if has_z:
            self.rate_keys += [(NET_Z, m) for m in range(n_periods)]
        self.n_rates = len(self.rate_keys)
        self.gamma_effects = [e for e in model.x_effects + model.z_effects if e.varying]
        self.eta_effects = [e for e in model.x_effects + model.z_effects if not e.varying]
        self.p1 = self.n_rates + len(self.gamma_effects)
        self.p2 = len(self.eta_effects)
        self.gamma_names = [f"rate:{net}:{m + 1}" for net, m in self.rate_keys]
        self.gamma_names += [e.key for e in self.gamma_effects]
        self.eta_names = [e.key for e in self.eta_effects]

        # per network: (from_gamma?, index) for assembling coefficient vectors
        def src(effects):
            out = []
            for eff in effects:
                if eff.varying:
                    out.append((True, self.n_rates + self.gamma_effects.index(eff)))
                else:
                    out.append((False, self.eta_effects.index(eff)))
            return out

        self._x_src = src(model.x_effects)
        self._z_src = src(model.z_effects)
        # shift space of the joint eta update: non-rate gamma coords then eta
        self.shift_names = self.gamma_names[self.n_rates:] + self.eta_names

    def theta(self, gamma_g: np.ndarray, eta: np.ndarray):
        tx = np.array([gamma_g[i] if from_g else eta[i] for from_g, i in self._x_src])
        tz = np.array([gamma_g[i] if from_g else eta[i] for from_g, i in self._z_src])
        return tx, tz

    def rate(self, gamma_g: np.ndarray, network: str, period: int) -> float:
        return float(gamma_g[self.rate_keys.index((network, period))])

    def rates_spec(self, gamma_g: np.ndarray) -> RateSpec:
        return RateSpec({key: float(gamma_g[k]) for k, key in enumerate(self.rate_keys)})

    def is_rate(self) -> np.ndarray:
        mask = np.zeros(self.p1, dtype=bool)
        mask[:self.n_rates] = True
        return mask


@dataclass
class ParamState:
    """Current coefficients: per-group gamma, shared eta, population mu/Sigma."""

    gamma: np.ndarray  # (G, p1)
    eta: np.ndarray    # (p2,)
    mu: np.ndarray     # (p1,)
    sigma: np.ndarray  # (p1, p1)

    def copy(self) -> "ParamState":
        return ParamState(self.gamma.copy(), self.eta.copy(), self.mu.copy(), self.sigma.copy())


PRIOR_MODES = ("conjugate", "jeffreys", "independence-jeffreys")


@dataclass
class PriorConfig:
    """NIW hyperparameters for (mu, Sigma) and per-component eta priors.

    ``eta_var`` entries of +inf mark improper flat components.  The two
    Jeffreys modes are the kappa0 -> 0, nu0 -> 0 (or -1), Lambda0 -> 0
    limits and ignore the stored NIW hyperparameters.
    """

    mode: str
    mu0: np.ndarray
    kappa0: float
    Lambda0: np.ndarray
    nu0: float
    eta_mean: np.ndarray
    eta_var: np.ndarray
    rate_mean: np.ndarray | None = None
    rate_cov: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in PRIOR_MODES:
            raise ValueError(f"unknown prior mode {self.mode!r}")

    @property
    def p1(self) -> int:
        return len(self.mu0)

    def validate(self, G: int | None = None) -> None:
        p = self.p1
        if self.mode == "conjugate":
            if self.nu0 <= p + 1:
                raise ValueError(f"nu0 = {self.nu0} must exceed p1 + 1 = {p + 1} "
                                 "for the prior expectation of Sigma to exist")
            if self.kappa0 <= 0:
                raise ValueError("kappa0 must be positive")
            if self.Lambda0.shape != (p, p):
                raise ValueError("Lambda0 has wrong shape")
        elif G is not None and G <= p + 1:
            raise ValueError(f"{self.mode} prior needs more groups than p1 + 1 = {p + 1}, got {G}")

    def eta_logpdf(self, eta: np.ndarray) -> float:
        total = 0.0
        for k in range(len(eta)):
            v = self.eta_var[k]
            if np.isfinite(v):
                total += -0.5 * (eta[k] - self.eta_mean[k]) ** 2 / v - 0.5 * math.log(2 * math.pi * v)
        return total

    def apply_rate_hyperparameters(self, rate_mean: np.ndarray, rate_cov: np.ndarray) -> None:
        """Install the data-dependent rate prior into the NIW hyperparameters."""
        nr = len(rate_mean)
        self.mu0[:nr] = rate_mean
        self.Lambda0[:nr, :nr] = 0.0
        self.Lambda0[:nr, :nr] = self.nu0 * np.diag(np.maximum(np.diag(rate_cov), 1e-4))
        self.rate_mean = rate_mean.copy()
        self.rate_cov = rate_cov.copy()


def default_prior(index: ParameterIndex, group_covariates=(), mode: str = "conjugate",
                  sigma0_sq: float | None = None, kappa0: float = 0.01,
                  nu0: float | None = None, zero_means: bool = False) -> PriorConfig:
    """Weakly informative defaults for the NIW and eta priors.

    Prior means: -2 for outdegree effects, +1 for reciprocity, +0.2 for
    transitive triplets, 0 otherwise; the diagonal of nu0^-1 Lambda0 is
    0.01 (0.1 for outdegree entries); nu0 = p1 + 2; kappa0 = 0.01.
    Constant coefficients get flat priors except effects of group-level
    covariates, which get N(0, 0.04).  Rate entries hold placeholders
    until the initializer installs the data-dependent values.  Passing
    ``sigma0_sq`` overrides the Lambda0 recipe with sigma0_sq * I;
    ``zero_means`` forces mu0 = 0 for every effect coordinate.
    """
    p1 = index.p1
    nr = index.n_rates
    mu0 = np.zeros(p1)
    diag = np.full(p1, 0.01)
    mu0[:nr] = 2.0
    diag[:nr] = 1.0
    for k, eff in enumerate(index.gamma_effects):
        pos = nr + k
        if eff.name == "outdegree":
            diag[pos] = 0.1
            if not zero_means:
                mu0[pos] = -2.0
        elif eff.name == "reciprocity" and not zero_means:
            mu0[pos] = 1.0
        elif eff.name == "transitive_triplets" and not zero_means:
            mu0[pos] = 0.2
    nu0 = float(nu0 if nu0 is not None else p1 + 2)
    if sigma0_sq is not None:
        Lambda0 = sigma0_sq * np.eye(p1)
    else:
        Lambda0 = nu0 * np.diag(diag)
    eta_mean = np.zeros(index.p2)
    eta_var = np.full(index.p2, np.inf)
    group_covariates = set(group_covariates)
    for k, eff in enumerate(index.eta_effects):
        group_level = eff.name == "log_group_size_activity" or (
            eff.covariate is not None and eff.covariate in group_covariates)
        if group_level:
            eta_var[k] = 0.04
    return PriorConfig(mode, mu0, float(kappa0), Lambda0, nu0, eta_mean, eta_var)


@dataclass
class RunConfig:
    """MCMC schedule: chains, steps, warmup, update counts, adaptation."""

    steps: int = 70_000
    warmup: int = 10_000
    chains: int = 3
    seed: int = 0
    thin: int = 1
    eta_updates: int = 5
    gamma_updates: int = 1
    path_factor: float = 2.0
    path_min: int = 20
    target_accept: float = 0.25
    threads: int = 1

    def __post_init__(self):
        if not 0 <= self.warmup < self.steps:
            raise ValueError("need warmup < steps")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("bad thin/chain count")


# ---------------------------------------------------------------------------
# Conjugate Gibbs updates

def _chol_psd(M: np.ndarray) -> np.ndarray:
    jitter = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10, 1e-10)
    raise NumericalError("covariance matrix is not positive definite")


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> float:
    d = x - mean
    w = np.linalg.solve(chol, d)
    return float(-0.5 * w @ w - np.log(np.diag(chol)).sum()
                 - 0.5 * len(x) * math.log(2 * math.pi))


def gibbs_update_mu(gamma_all: np.ndarray, sigma: np.ndarray, prior: PriorConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw mu from its full conditional given the group coefficients."""
    G = gamma_all.shape[0]
    kappa0 = prior.kappa0 if prior.mode == "conjugate" else 0.0
    if G == 0 and kappa0 == 0:
        raise ValueError("mu update needs groups under a Jeffreys prior")
    gbar = gamma_all.mean(axis=0) if G else np.zeros_like(prior.mu0)
    mean = (G * gbar + kappa0 * prior.mu0) / (kappa0 + G)
    chol = _chol_psd(sigma / (kappa0 + G))
    return mean + chol @ rng.standard_normal(len(mean))


def sigma_posterior_params(gamma_all: np.ndarray, prior: PriorConfig):
    """(scale, df) of the inverse-Wishart full conditional of Sigma."""
    G, p = gamma_all.shape if gamma_all.size else (0, prior.p1)
    if prior.mode == "conjugate":
        Lambda0, nu0, kappa0 = prior.Lambda0, prior.nu0, prior.kappa0
    else:
        Lambda0 = np.zeros((p, p))
        nu0 = 0.0 if prior.mode == "jeffreys" else -1.0
        kappa0 = 0.0
        if G <= p + 1:
            raise ValueError(f"{prior.mode} prior needs G > p1 + 1 = {p + 1}, got {G}")
    Lam = Lambda0.copy()
    if G:
        gbar = gamma_all.mean(axis=0)
        dev = gamma_all - gbar
        Lam += dev.T @ dev
        if kappa0 > 0:
            d0 = gbar - prior.mu0
            Lam += (kappa0 * G / (kappa0 + G)) * np.outer(d0, d0)
    return Lam, nu0 + G


def gibbs_update_sigma(gamma_all: np.ndarray, prior: PriorConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw Sigma from its inverse-Wishart full conditional."""
    Lam, df = sigma_posterior_params(gamma_all, prior)
    p = Lam.shape[0]
    if df < p:
        raise ValueError(f"inverse-Wishart degrees of freedom {df} below dimension {p}")
    return scipy.stats.invwishart.rvs(df=df, scale=Lam, random_state=rng).reshape(p, p)


# ---------------------------------------------------------------------------
# Runtime bundles

class GroupWork:
    """Per-group sampler workspace: waves, covariates, kernel tables, paths."""

    def __init__(self, grp, h: int, cov: CovariateSet, model: ModelSpec,
                 rng: np.random.Generator):
        self.gid = grp.gid
        self.n = grp.n
        self.h = h
        self.waves = [grp.wave_state(m, h) for m in range(grp.n_waves)]
        self.cov = cov
        self.tables = kernels.build_tables(model, cov, grp.n, h)
        self.paths = [PathWork(self.waves[m], initial_path(self.waves[m], self.waves[m + 1], rng, period=m))
                      for m in range(grp.n_waves - 1)]
        self.tmp_logps = [np.zeros_like(p.logps) for p in self.paths]
        self.loglik = -np.inf

    def kargs(self, tx: np.ndarray, tz: np.ndarray):
        t = self.tables
        return (t.kinds_x, t.cov_x, t.aux1_x, t.aux2_x, tx,
                t.kinds_z, t.cov_z, t.aux1_z, t.aux2_z, tz,
                t.covmat, t.logn, t.zbar)

    def replay(self, index: ParameterIndex, gamma_g, eta, write: bool) -> float:
        """Augmented log likelihood over all periods under given coefficients.

        ``write=True`` commits the per-step log probability caches.
        """
        tx, tz = index.theta(gamma_g, eta)
        ka = self.kargs(tx, tz)
        total = 0.0
        for m, pw in enumerate(self.paths):
            lam_x = index.rate(gamma_g, NET_X, m)
            lam_z = index.rate(gamma_g, NET_Z, m) if index.has_z else 0.0
            out = pw.logps if write else self.tmp_logps[m]
            if out.shape[0] < pw.logps.shape[0]:
                self.tmp_logps[m] = np.zeros_like(pw.logps)
                out = self.tmp_logps[m]
            pw.sx[:] = pw.x0
            pw.sz[:] = pw.z0
            total += kernels.replay_logp(pw.sx, pw.sz, pw.steps, pw.R, *ka,
                                         lam_x, lam_z, 1.0, pw.buf, out)
        return float(total)

    def commit_tmp(self):
        for pw, tmp in zip(self.paths, self.tmp_logps):
            pw.logps[:pw.R] = tmp[:pw.R]

    def cached_total(self, index: ParameterIndex, gamma_g) -> float:
        total = 0.0
        for m, pw in enumerate(self.paths):
            lam_x = index.rate(gamma_g, NET_X, m)
            lam_z = index.rate(gamma_g, NET_Z, m) if index.has_z else 0.0
            total += pw.total_logp(lam_x, lam_z, 1.0)
        return total


class _AdaptiveScale:
    """Robbins-Monro tuning of a log proposal scale toward a target rate."""

    def __init__(self, target: float = 0.25, initial: float = 1.0):
        self.log_scale = math.log(initial)
        self.target = target
        self.t = 0

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def update(self, alpha: float) -> None:
        self.t += 1
        gain = 1.0 / self.t ** 0.6
        self.log_scale += gain * (alpha - self.target)
        self.log_scale = min(max(self.log_scale, -10.0), 6.0)


@dataclass
class ChainResult:
    """Retained draws of one chain plus acceptance bookkeeping."""

    mu: np.ndarray      # (S, p1)
    sigma: np.ndarray   # (S, p1*(p1+1)/2) lower triangle
    eta: np.ndarray     # (S, p2)
    gamma: np.ndarray   # (S, G*p1)
    acceptance: dict
    columns: list[str]

    def matrix(self) -> np.ndarray:
        return np.hstack([self.mu, self.sigma, self.eta, self.gamma])

    def global_matrix(self) -> np.ndarray:
        return np.hstack([self.mu, self.sigma, self.eta])


def draw_columns(index: ParameterIndex, group_ids: list[str]) -> list[str]:
    cols = [f"mu:{name}" for name in index.gamma_names]
    p1 = index.p1
    cols += [f"sigma:{i}:{j}" for i in range(p1) for j in range(i + 1)]
    cols += [f"eta:{name}" for name in index.eta_names]
    for gid in group_ids:
        cols += [f"gamma:{gid}:{name}" for name in index.gamma_names]
    return cols


def global_columns(index: ParameterIndex) -> list[str]:
    p1 = index.p1
    return ([f"mu:{name}" for name in index.gamma_names]
            + [f"sigma:{i}:{j}" for i in range(p1) for j in range(i + 1)]
            + [f"eta:{name}" for name in index.eta_names])


class HierSampler:
    """One chain of the full MCMC scheme."""

    def __init__(self, dataset: PanelDataset, model: ModelSpec, prior: PriorConfig,
                 run: RunConfig, init_state: ParamState, proposal_covs: dict,
                 seed_seq: np.random.SeedSequence, flatten_data: bool = False):
        self.index = ParameterIndex(model, dataset.n_periods, has_z=dataset.h > 0 and model.has_z)
        self.prior = prior
        self.run = run
        self.flatten = flatten_data
        prior.validate(G=dataset.G)
        children = seed_seq.spawn(dataset.G + 1)
        self.gen = np.random.default_rng(children[0])
        self.group_gens = [np.random.default_rng(s) for s in children[1:]]
        self.groups = [GroupWork(grp, dataset.h, dataset.covariates_for(g), model, self.group_gens[g])
                       for g, grp in enumerate(dataset.groups)]
        self.G = len(self.groups)
        self.state = init_state.copy()
        if self.state.gamma.shape != (self.G, self.index.p1):
            raise ValueError("initial gamma has wrong shape")
        nr = self.index.n_rates
        if (self.state.gamma[:, :nr] <= 0).any():
            raise ValueError("initial rate coefficients must be positive")

        p1, p2 = self.index.p1, self.index.p2
        self.C_gamma = [
            _chol_psd(np.asarray(proposal_covs.get("gamma", [np.eye(p1) * 0.01] * self.G)[g]))
            for g in range(self.G)]
        self.C_eta = _chol_psd(np.asarray(proposal_covs.get("eta", np.eye(max(p2, 1)) * 0.01))) if p2 else None
        n_shift = p1 - nr + p2
        self.C_shift = _chol_psd(np.asarray(proposal_covs.get("shift", np.eye(max(n_shift, 1)) * 0.01))) if n_shift else None
        self.s_gamma = [_AdaptiveScale(run.target_accept) for _ in range(self.G)]
        self.s_eta = _AdaptiveScale(run.target_accept)
        self.s_shift = _AdaptiveScale(run.target_accept)
        self.adapting = True
        self.move_cum = move_cum()
        self.accept_counts = {
            "gamma": np.zeros(2, dtype=np.int64),
            "eta_direct": np.zeros(2, dtype=np.int64),
            "eta_joint": np.zeros(2, dtype=np.int64),
            "paths_proposed": np.zeros(5, dtype=np.int64),
            "paths_accepted": np.zeros(5, dtype=np.int64),
        }
        self._sigma_chol = _chol_psd(self.state.sigma)
        if not self.flatten:
            for g, gw in enumerate(self.groups):
                gw.loglik = gw.replay(self.index, self.state.gamma[g], self.state.eta, write=True)
        else:
            for gw in self.groups:
                gw.loglik = 0.0

    # -- likelihood plumbing ------------------------------------------------

    def group_loglik(self, g: int, gamma_g, eta) -> float:
        if self.flatten:
            return 0.0
        return self.groups[g].replay(self.index, gamma_g, eta, write=False)

    # -- update blocks ------------------------------------------------------

    def update_paths(self):
        if self.flatten:
            return
        for g, gw in enumerate(self.groups):
            gamma_g = self.state.gamma[g]
            tx, tz = self.index.theta(gamma_g, self.state.eta)
            ka = gw.kargs(tx, tz)
            gen = self.group_gens[g]
            for m, pw in enumerate(gw.paths):
                lam_x = self.index.rate(gamma_g, NET_X, m)
                lam_z = self.index.rate(gamma_g, NET_Z, m) if self.index.has_z else 0.0
                has_z = self.index.has_z and lam_z > 0
                n_upd = max(self.run.path_min, int(self.run.path_factor * pw.R))
                stats = pw.sweep(ka, lam_x, lam_z, 1.0, has_z, gen, n_upd, )
                self.accept_counts["paths_proposed"] += stats["proposed"]
                self.accept_counts["paths_accepted"] += stats["accepted"]
            gw.loglik = gw.cached_total(self.index, gamma_g)

    def mh_update_gamma(self, g: int) -> float:
        """One random-walk update of one group's varying coefficients."""
        gw = self.groups[g]
        gen = self.group_gens[g]
        state = self.state
        gamma_g = state.gamma[g]
        scale = self.s_gamma[g].scale
        prop = gamma_g + scale * (self.C_gamma[g] @ gen.standard_normal(self.index.p1))
        self.accept_counts["gamma"][0] += 1
        alpha = 0.0
        nr = self.index.n_rates
        if (prop[:nr] > 0).all():
            chol = self._sigma_chol
            lp_new = self.group_loglik(g, prop, state.eta)
            d_prior = mvn_logpdf(prop, state.mu, chol) - mvn_logpdf(gamma_g, state.mu, chol)
            log_alpha = d_prior + lp_new - gw.loglik
            alpha = min(1.0, math.exp(min(log_alpha, 0.0)))
            if log_alpha >= 0 or gen.random() < math.exp(log_alpha):
                state.gamma[g] = prop
                if not self.flatten:
                    gw.commit_tmp()
                gw.loglik = lp_new
                self.accept_counts["gamma"][1] += 1
        if self.adapting:
            self.s_gamma[g].update(alpha)
        return alpha

    def mh_update_eta_direct(self) -> float:
        """Random-walk update of the constant coefficients."""
        if self.index.p2 == 0:
            return 1.0
        state = self.state
        gen = self.gen
        prop = state.eta + self.s_eta.scale * (self.C_eta @ gen.standard_normal(self.index.p2))
        self.accept_counts["eta_direct"][0] += 1
        lp_new = [self.group_loglik(g, state.gamma[g], prop) for g in range(self.G)]
        log_alpha = (self.prior.eta_logpdf(prop) - self.prior.eta_logpdf(state.eta)
                     + sum(lp_new) - sum(gw.loglik for gw in self.groups))
        alpha = min(1.0, math.exp(min(log_alpha, 0.0)))
        if log_alpha >= 0 or gen.random() < math.exp(log_alpha):
            state.eta = prop
            for g, gw in enumerate(self.groups):
                if not self.flatten:
                    gw.commit_tmp()
                gw.loglik = lp_new[g]
            self.accept_counts["eta_direct"][1] += 1
        if self.adapting:
            self.s_eta.update(alpha)
        return alpha

    def mh_update_eta_joint(self) -> float:
        """Additive shift of all coefficient vectors, rates excluded."""
        nr = self.index.n_rates
        n_gvar = self.index.p1 - nr
        n_shift = n_gvar + self.index.p2
        if n_shift == 0:
            return 1.0
        state = self.state
        gen = self.gen
        delta = self.s_shift.scale * (self.C_shift @ gen.standard_normal(n_shift))
        d_gamma = np.zeros(self.index.p1)
        d_gamma[nr:] = delta[:n_gvar]
        prop_eta = state.eta + delta[n_gvar:]
        self.accept_counts["eta_joint"][0] += 1
        chol = self._sigma_chol
        log_alpha = self.prior.eta_logpdf(prop_eta) - self.prior.eta_logpdf(state.eta)
        lp_new = []
        for g in range(self.G):
            prop_g = state.gamma[g] + d_gamma
            log_alpha += (mvn_logpdf(prop_g, state.mu, chol)
                          - mvn_logpdf(state.gamma[g], state.mu, chol))
            lp = self.group_loglik(g, prop_g, prop_eta)
            lp_new.append(lp)
            log_alpha += lp - self.groups[g].loglik
        alpha = min(1.0, math.exp(min(log_alpha, 0.0)))
        if log_alpha >= 0 or gen.random() < math.exp(log_alpha):
            state.gamma = state.gamma + d_gamma[None, :]
            state.eta = prop_eta
            for g, gw in enumerate(self.groups):
                if not self.flatten:
                    gw.commit_tmp()
                gw.loglik = lp_new[g]
            self.accept_counts["eta_joint"][1] += 1
        if self.adapting:
            self.s_shift.update(alpha)
        return alpha

    # -- one full step ------------------------------------------------------

    def step(self):
        self._sigma_chol = _chol_psd(self.state.sigma)
        self.update_paths()
        for _ in range(self.run.gamma_updates):
            for g in range(self.G):
                self.mh_update_gamma(g)
        for k in range(self.run.eta_updates):
            if k % 2 == 0:
                self.mh_update_eta_direct()
            else:
                self.mh_update_eta_joint()
        self.state.mu = gibbs_update_mu(self.state.gamma, self.state.sigma, self.prior, self.gen)
        self.state.sigma = gibbs_update_sigma(self.state.gamma, self.prior, self.gen)
        if not np.isfinite(self.state.mu).all() or not np.isfinite(self.state.sigma).all():
            raise NumericalError("non-finite global parameters during MCMC")

    def run_chain(self) -> ChainResult:
        run = self.run
        p1, p2 = self.index.p1, self.index.p2
        tril = np.tril_indices(p1)
        n_keep = (run.steps - run.warmup + run.thin - 1) // run.thin
        mu_d = np.empty((n_keep, p1))
        sig_d = np.empty((n_keep, len(tril[0])))
        eta_d = np.empty((n_keep, p2))
        gam_d = np.empty((n_keep, self.G * p1))
        k = 0
        for it in range(run.steps):
            self.adapting = it < run.warmup
            self.step()
            if it >= run.warmup and (it - run.warmup) % run.thin == 0:
                mu_d[k] = self.state.mu
                sig_d[k] = self.state.sigma[tril]
                eta_d[k] = self.state.eta
                gam_d[k] = self.state.gamma.ravel()
                k += 1
        acceptance = {key: val.tolist() for key, val in self.accept_counts.items()}
        acceptance["scales"] = {
            "gamma": [s.scale for s in self.s_gamma],
            "eta": self.s_eta.scale,
            "shift": self.s_shift.scale,
        }
        cols = draw_columns(self.index, [gw.gid for gw in self.groups])
        return ChainResult(mu_d[:k], sig_d[:k], eta_d[:k], gam_d[:k], acceptance, cols)


def _chain_job(args):
    dataset, model, prior, run, init_state, proposal_covs, seed_entropy, chain, flatten = args
    seq = np.random.SeedSequence(entropy=seed_entropy, spawn_key=(chain,))
    sampler = HierSampler(dataset, model, prior, run, init_state, proposal_covs, seq,
                          flatten_data=flatten)
    return sampler.run_chain()


def mcmc_run(dataset: PanelDataset, model: ModelSpec, prior: PriorConfig, run: RunConfig,
             init=None, flatten_data: bool = False) -> list[ChainResult]:
    """Run the configured number of chains; returns one ChainResult per chain.

    ``init`` is an :class:`InitResult`; omitted, the two-stage initializer
    runs first with a seed derived from the run seed.
    """
    if init is None:
        init_rng = np.random.default_rng(np.random.SeedSequence(entropy=run.seed, spawn_key=(999,)))
        init = initialize(dataset, model, init_rng)
    if prior.rate_mean is None:
        prior.apply_rate_hyperparameters(init.rate_mean, init.rate_cov)
    proposal_covs = {"gamma": init.C_g, "eta": init.C0_eta, "shift": init.C0_joint}
    jobs = [(dataset, model, prior, run, init.state, proposal_covs, run.seed, c, flatten_data)
            for c in range(run.chains)]
    if run.threads > 1 and run.chains > 1:
        with ProcessPoolExecutor(max_workers=min(run.threads, run.chains)) as pool:
            chains = list(pool.map(_chain_job, jobs))
    else:
        chains = [_chain_job(j) for j in jobs]
    _warn_rate_truncation(chains, ParameterIndex(model, dataset.n_periods,
                                                 has_z=dataset.h > 0 and model.has_z))
    return chains


def _warn_rate_truncation(chains: list[ChainResult], index: ParameterIndex) -> None:
    """Check that the untruncated normal puts negligible mass on negative rates."""
    mu = np.concatenate([c.mu for c in chains]).mean(axis=0)
    p1 = index.p1
    tril = np.tril_indices(p1)
    sig_flat = np.concatenate([c.sigma for c in chains]).mean(axis=0)
    sigma = np.zeros((p1, p1))
    sigma[tril] = sig_flat
    sigma = sigma + np.tril(sigma, -1).T
    for k in range(index.n_rates):
        sd = math.sqrt(max(sigma[k, k], 1e-12))
        mass = scipy.stats.norm.cdf(0.0, loc=mu[k], scale=sd)
        if mass > 0.01:
            warnings.warn(
                f"fitted rate component {index.gamma_names[k]} puts {mass:.1%} "
                "normal mass below zero; the positive-rate truncation is not negligible")


# ---------------------------------------------------------------------------
# Two-stage method-of-moments initializer

@dataclass
class InitResult:
    state: ParamState
    C_g: list[np.ndarray]
    C0_eta: np.ndarray
    C0_joint: np.ndarray
    rate_mean: np.ndarray
    rate_cov: np.ndarray
    theta0: np.ndarray
    theta0_names: list[str]
    fallback: bool = False


def initial_rate_value(n_changes: float, n: int) -> float:
    """Starting rate for the moment iteration: 1.5 observed changes per actor."""
    return max(1.5 * n_changes / n, 0.1)


class _MomentProblem:
    """Statistic targets and simulation for the stage-1/2 moment estimator.

    The stage-1 parameter vector is [all effects (X then Z, model order),
    all rates (network-major, period-minor)].
    """

    def __init__(self, dataset: PanelDataset, model: ModelSpec, index: ParameterIndex):
        self.model = model
        self.index = index
        self.h = dataset.h
        self.effects = model.x_effects + model.z_effects
        self.names = [e.key for e in self.effects] + [f"rate:{net}:{m + 1}" for net, m in index.rate_keys]
        self.p_eff = len(self.effects)
        self.p = self.p_eff + index.n_rates
        self.covs = [dataset.covariates_for(g) for g in range(dataset.G)]
        self.groups = dataset.groups
        self.waves = [[grp.wave_state(m, dataset.h) for m in range(grp.n_waves)] for grp in dataset.groups]
        self.tables = [kernels.build_tables(model, self.covs[g], grp.n, dataset.h)
                       for g, grp in enumerate(dataset.groups)]

    def theta_split(self, theta: np.ndarray):
        nx = len(self.model.x_effects)
        return (np.ascontiguousarray(theta[:nx]),
                np.ascontiguousarray(theta[nx:self.p_eff]))

    def rate_of(self, theta: np.ndarray, net: str, period: int) -> float:
        return float(theta[self.p_eff + self.index.rate_keys.index((net, period))])

    def observed_u(self, groups=None) -> np.ndarray:
        """Per-parameter targets: end-wave statistics and co-observed change counts."""
        gs = range(len(self.groups)) if groups is None else groups
        u = np.zeros(self.p)
        for g in gs:
            grp = self.groups[g]
            for m in range(grp.n_waves - 1):
                end = self.waves[g][m + 1]
                for k, eff in enumerate(self.effects):
                    u[k] += statistic_total(eff, end, self.covs[g])
                for r, (net, period) in enumerate(self.index.rate_keys):
                    if period != m:
                        continue
                    if net == NET_X:
                        a, b = grp.x_waves[m], grp.x_waves[m + 1]
                        both = grp.x_masks[m] & grp.x_masks[m + 1]
                        np.fill_diagonal(both, False)
                        total = grp.n * (grp.n - 1)
                    else:
                        a, b = grp.z_waves[m], grp.z_waves[m + 1]
                        both = grp.z_masks[m] & grp.z_masks[m + 1]
                        total = a.size
                    kept = int(both.sum())
                    changes = int((a[both] != b[both]).sum())
                    u[self.p_eff + r] += changes * (total / kept) if kept else 0.0
        return u

    def simulate_u(self, theta: np.ndarray, rng: np.random.Generator, groups=None) -> np.ndarray:
        """One simulated draw of the statistic vector under theta."""
        gs = range(len(self.groups)) if groups is None else groups
        tx, tz = self.theta_split(theta)
        u = np.zeros(self.p)
        for g in gs:
            grp = self.groups[g]
            tab = self.tables[g]
            ka = (tab.kinds_x, tab.cov_x, tab.aux1_x, tab.aux2_x, tx,
                  tab.kinds_z, tab.cov_z, tab.aux1_z, tab.aux2_z, tz,
                  tab.covmat, tab.logn, tab.zbar)
            buf = np.empty(max(grp.n, self.h + 1) + 1)
            for m in range(grp.n_waves - 1):
                lam_x = self.rate_of(theta, NET_X, m)
                lam_z = self.rate_of(theta, NET_Z, m) if self.index.has_z else 0.0
                R = int(rng.poisson(grp.n * (lam_x + lam_z)))
                x = self.waves[g][m].x.copy()
                z = self.waves[g][m].z.copy()
                if R:
                    steps = np.full((R, 3), -1, dtype=np.int64)
                    kernels.simulate_steps(x, z, R, steps, *ka, lam_x, lam_z, rng, buf)
                end = JointState(grp.n, self.h, x, z)
                for k, eff in enumerate(self.effects):
                    u[k] += statistic_total(eff, end, self.covs[g])
                for r, (net, period) in enumerate(self.index.rate_keys):
                    if period != m:
                        continue
                    if net == NET_X:
                        u[self.p_eff + r] += hamming(x, self.waves[g][m].x)
                    else:
                        u[self.p_eff + r] += hamming(z, self.waves[g][m].z, exclude_diagonal=False)
        return u

    def start_theta(self) -> np.ndarray:
        theta = np.zeros(self.p)
        for k, eff in enumerate(self.effects):
            if eff.name == "outdegree":
                theta[k] = -1.5
            elif eff.name == "reciprocity":
                theta[k] = 1.0
        for r, (net, period) in enumerate(self.index.rate_keys):
            per_actor = []
            for g, grp in enumerate(self.groups):
                if net == NET_X:
                    ch = hamming(grp.x_waves[period], grp.x_waves[period + 1])
                else:
                    ch = hamming(grp.z_waves[period], grp.z_waves[period + 1], exclude_diagonal=False)
                per_actor.append(ch / grp.n)
            theta[self.p_eff + r] = initial_rate_value(float(np.mean(per_actor)), 1)
        return theta

    def clip(self, theta: np.ndarray) -> np.ndarray:
        theta = theta.copy()
        theta[:self.p_eff] = np.clip(theta[:self.p_eff], -10.0, 10.0)
        theta[self.p_eff:] = np.clip(theta[self.p_eff:], 0.05, 60.0)
        return theta


def _fd_jacobian(prob: _MomentProblem, theta: np.ndarray, rng: np.random.Generator,
                 batch: int, groups=None) -> np.ndarray:
    """Finite-difference response of mean statistics to each parameter."""
    p = prob.p
    deltas = np.where(np.arange(p) < prob.p_eff, 0.3, np.maximum(0.25 * theta, 0.15))
    seeds = rng.integers(0, 2 ** 63 - 1, size=batch)
    base = np.mean([prob.simulate_u(theta, np.random.default_rng(s), groups) for s in seeds], axis=0)
    D = np.zeros((p, p))
    for k in range(p):
        th = theta.copy()
        th[k] += deltas[k]
        up = np.mean([prob.simulate_u(th, np.random.default_rng(s), groups) for s in seeds], axis=0)
        D[:, k] = (up - base) / deltas[k]
    return D


def _robust_inverse(D: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(D, rcond=1e-8)


def _spd(M: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, floor)
    return V @ np.diag(w) @ V.T


def _rm_iterate(prob: _MomentProblem, theta: np.ndarray, Dinv: np.ndarray, u_obs: np.ndarray,
                rng: np.random.Generator, subphases: int, iters: int, gain0: float,
                groups=None, freeze: np.ndarray | None = None) -> np.ndarray:
    gain = gain0
    trail: list[np.ndarray] = []
    for sp in range(subphases):
        for _ in range(iters):
            u = prob.simulate_u(theta, rng, groups)
            step = gain * (Dinv @ (u - u_obs))
            if freeze is not None:
                step[freeze] = 0.0
            theta = prob.clip(theta - step)
            if sp == subphases - 1:
                trail.append(theta)
        gain *= 0.5
    if trail:
        theta = np.mean(trail, axis=0)
    return prob.clip(theta)


def initialize(dataset: PanelDataset, model: ModelSpec, rng: np.random.Generator,
               subphases: int = 3, iters: int = 50, gain0: float = 0.2,
               pilot_batch: int = 6, cov_batch: int = 80,
               stage2_iters: int = 20, stage2_batch: int = 40,
               weight: float = 0.5) -> InitResult:
    """Two-stage moment initializer.

    Stage 1 fits one coefficient vector (rates pooled) to the whole panel
    by a brief Robbins-Monro iteration; stage 2 refines every group's
    varying coordinates from that estimate with the constant coordinates
    frozen.  Derives the initial parameter state, proposal covariances,
    and the data-dependent rate prior.
    """
    index = ParameterIndex(model, dataset.n_periods, has_z=dataset.h > 0 and model.has_z)
    prob = _MomentProblem(dataset, model, index)
    u_obs = prob.observed_u()
    theta = prob.start_theta()

    try:
        D = _fd_jacobian(prob, theta, rng, pilot_batch)
        Dinv = _robust_inverse(D)
        theta0 = _rm_iterate(prob, theta, Dinv, u_obs, rng, subphases, iters, gain0)
        batch = np.stack([prob.simulate_u(theta0, rng) for _ in range(cov_batch)])
        cov_u = np.cov(batch.T) if prob.p > 1 else np.atleast_2d(np.var(batch))
        C0_full = _spd(Dinv @ cov_u @ Dinv.T, 1e-8)
        if not np.isfinite(theta0).all():
            raise FloatingPointError("non-finite stage-1 estimate")
        fallback = False
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        warnings.warn(f"moment initializer diverged ({exc}); falling back to prior defaults")
        theta0 = prob.clip(prob.start_theta())
        C0_full = np.eye(prob.p) * 0.05
        Dinv = np.eye(prob.p)
        fallback = True

    # map stage-1 coordinates onto the gamma/eta layout
    eff_names = [e.key for e in prob.effects]
    gamma_cols = []
    for name in index.gamma_names:
        if name.startswith("rate:"):
            _, net, mm = name.split(":")
            gamma_cols.append(prob.p_eff + index.rate_keys.index((net, int(mm) - 1)))
        else:
            gamma_cols.append(eff_names.index(name))
    eta_cols = [eff_names.index(name) for name in index.eta_names]
    eta0 = theta0[eta_cols] if eta_cols else np.zeros(0)
    shift_cols = gamma_cols[index.n_rates:] + eta_cols
    C0_joint = _spd(C0_full[np.ix_(shift_cols, shift_cols)], 1e-8) if shift_cols else np.zeros((0, 0))
    C0_eta = _spd(C0_full[np.ix_(eta_cols, eta_cols)], 1e-8) if eta_cols else np.zeros((0, 0))

    # stage 2: per-group refinement with eta coordinates frozen; the group-level
    # statistic response is approximated by the pooled Jacobian scaled to one
    # group's share (a per-group finite-difference estimate is noise-dominated)
    freeze = np.ones(prob.p, dtype=bool)
    for c in gamma_cols:
        freeze[c] = False
    G = dataset.G
    gamma0 = np.zeros((G, index.p1))
    C_g: list[np.ndarray] = []
    rate_rows = np.zeros((G, index.n_rates))
    C0_gamma = C0_full[np.ix_(gamma_cols, gamma_cols)]
    for g in range(G):
        u_g = prob.observed_u([g])
        Dinv_g = G * Dinv
        try:
            th_g = _rm_iterate(prob, theta0.copy(), Dinv_g, u_g, rng, 2, stage2_iters, gain0,
                               groups=[g], freeze=freeze)
            batch_g = np.stack([prob.simulate_u(th_g, rng, [g]) for _ in range(stage2_batch)])
            cov_g = np.cov(batch_g.T)
            C_full_g = Dinv_g @ cov_g @ Dinv_g.T
        except (FloatingPointError, np.linalg.LinAlgError):
            th_g = theta0.copy()
            C_full_g = G * C0_full
        gamma0[g] = th_g[gamma_cols]
        C_sub = C_full_g[np.ix_(gamma_cols, gamma_cols)]
        C_g.append(_spd(weight * C_sub + (1 - weight) * C0_gamma, 1e-8))
        rate_rows[g] = th_g[[prob.p_eff + r for r in range(index.n_rates)]]

    rate_mean = np.median(rate_rows, axis=0)
    if G > 1:
        rate_cov = 0.5 * np.cov(rate_rows.T).reshape(index.n_rates, index.n_rates)
    else:
        rate_cov = np.diag(np.maximum(0.25 * rate_mean, 0.25) ** 2)
    rate_cov = _spd(rate_cov, 1e-3)

    mu0 = gamma0.mean(axis=0)
    if G > 1:
        sigma0 = _spd(np.cov(gamma0.T).reshape(index.p1, index.p1) + 0.01 * np.eye(index.p1), 1e-4)
    else:
        sigma0 = 0.05 * np.eye(index.p1)
    state = ParamState(gamma=gamma0, eta=eta0, mu=mu0, sigma=sigma0)
    return InitResult(state, C_g, C0_eta, C0_joint, rate_mean, rate_cov,
                      theta0, prob.names, fallback)


# ---------------------------------------------------------------------------
# Independent single-group fit (flat prior), for reference comparisons

def independent_group_fit(dataset: PanelDataset, g: int, model: ModelSpec,
                          steps: int, warmup: int, seed: int,
                          init: InitResult | None = None) -> tuple[list[str], np.ndarray]:
    """Posterior draws of one group's full coefficient vector under a flat prior.

    Uses the same path-augmentation machinery with G = 1 and no pooling:
    gamma gets an improper constant prior (positive rates), eta likewise.
    Returns (parameter names, draws) for the group's theta = (gamma, eta).
    """
    sub = PanelDataset([dataset.groups[g]], h=dataset.h, second_mode=dataset.second_mode)
    index = ParameterIndex(model, sub.n_periods, has_z=sub.h > 0 and model.has_z)
    if init is None:
        init = initialize(sub, model, np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]),
                          subphases=2, iters=30, pilot_batch=4, cov_batch=40,
                          stage2_iters=10, stage2_batch=20)
    run = RunConfig(steps=steps, warmup=warmup, chains=1, seed=seed, eta_updates=0)
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(0,))
    sampler = _FlatSampler(sub, model, run, init, seq)
    return sampler.run_flat()


class _FlatSampler(HierSampler):
    """Single-group sampler whose gamma target drops the population density."""

    def __init__(self, dataset, model, run, init, seq):
        p1 = ParameterIndex(model, dataset.n_periods,
                            has_z=dataset.h > 0 and model.has_z).p1
        prior = PriorConfig("conjugate", np.zeros(p1), 1.0, np.eye(p1), p1 + 2,
                            np.zeros(len(init.state.eta)), np.full(len(init.state.eta), np.inf))
        # joint vector (gamma, eta) is updated as one block via gamma; eta folded in
        full_state = ParamState(init.state.gamma.copy(), init.state.eta.copy(),
                                init.state.mu.copy(), init.state.sigma.copy())
        covs = {"gamma": init.C_g, "eta": init.C0_eta, "shift": init.C0_joint}
        super().__init__(dataset, model, prior, run, full_state, covs, seq)

    def mh_update_gamma(self, g: int) -> float:
        """Flat prior: drop the phi(gamma | mu, Sigma) factor."""
        gw = self.groups[g]
        gen = self.group_gens[g]
        state = self.state
        gamma_g = state.gamma[g]
        prop = gamma_g + self.s_gamma[g].scale * (self.C_gamma[g] @ gen.standard_normal(self.index.p1))
        self.accept_counts["gamma"][0] += 1
        alpha = 0.0
        nr = self.index.n_rates
        if (prop[:nr] > 0).all():
            lp_new = self.group_loglik(g, prop, state.eta)
            log_alpha = lp_new - gw.loglik
            alpha = min(1.0, math.exp(min(log_alpha, 0.0)))
            if log_alpha >= 0 or gen.random() < math.exp(log_alpha):
                state.gamma[g] = prop
                gw.commit_tmp()
                gw.loglik = lp_new
                self.accept_counts["gamma"][1] += 1
        if self.adapting:
            self.s_gamma[g].update(alpha)
        return alpha

    def step(self):
        self._sigma_chol = _chol_psd(self.state.sigma)
        self.update_paths()
        self.mh_update_gamma(0)
        if self.index.p2:
            self.mh_update_eta_direct()

    def run_flat(self):
        run = self.run
        names = self.index.gamma_names + self.index.eta_names
        n_keep = (run.steps - run.warmup + run.thin - 1) // run.thin
        draws = np.empty((n_keep, len(names)))
        k = 0
        for it in range(run.steps):
            self.adapting = it < run.warmup
            self.step()
            if it >= run.warmup and (it - run.warmup) % run.thin == 0:
                draws[k, :self.index.p1] = self.state.gamma[0]
                draws[k, self.index.p1:] = self.state.eta
                k += 1
        return names, draws[:k]
