"""Synthetic multilevel studies: generate panels with known parameters, score recovery."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import GroupData, PanelDataset
from .effects import EffectDescriptor, ModelSpec
from .hierbayes import ParameterIndex
from .netstate import NET_X, NET_Z, JointState
from .process import RateSpec, simulate_period


@dataclass
class StudyDesign:
    """Everything needed to draw one synthetic multilevel panel."""

    G: int
    n: int
    h: int
    n_waves: int
    model: ModelSpec
    mu: np.ndarray           # over gamma coordinates (rates first)
    sigma: np.ndarray
    eta: np.ndarray
    x_density: float = 0.12
    z_density: float = 0.2
    name: str = "study"

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        index = self.index()
        if self.mu.shape != (index.p1,):
            raise ValueError(f"mu must have length p1 = {index.p1}")
        if self.sigma.shape != (index.p1, index.p1):
            raise ValueError("sigma has wrong shape")
        if self.eta.shape != (index.p2,):
            raise ValueError(f"eta must have length p2 = {index.p2}")
        if (np.linalg.eigvalsh(self.sigma) <= 0).any():
            raise ValueError("sigma must be positive definite")
        if (self.mu[:index.n_rates] <= 0).any():
            raise ValueError("rate means must be positive")

    def index(self) -> ParameterIndex:
        return ParameterIndex(self.model, self.n_waves - 1, has_z=self.h > 0 and self.model.has_z)

    def to_json(self) -> dict:
        index = self.index()
        return {
            "name": self.name,
            "G": self.G, "n": self.n, "h": self.h, "n_waves": self.n_waves,
            "x_density": self.x_density, "z_density": self.z_density,
            "x_effects": [{"name": e.name, "varying": e.varying, "covariate": e.covariate}
                          for e in self.model.x_effects],
            "z_effects": [{"name": e.name, "varying": e.varying, "covariate": e.covariate}
                          for e in self.model.z_effects],
            "mu": dict(zip(index.gamma_names, self.mu.tolist())),
            "sigma_diag": np.diag(self.sigma).tolist(),
            "eta": dict(zip(index.eta_names, self.eta.tolist())),
        }


def design_from_json(doc: dict) -> StudyDesign:
    x_effects = [EffectDescriptor(e["name"], NET_X, covariate=e.get("covariate"),
                                  varying=bool(e.get("varying", False)))
                 for e in doc["x_effects"]]
    z_effects = [EffectDescriptor(e["name"], NET_Z, covariate=e.get("covariate"),
                                  varying=bool(e.get("varying", False)))
                 for e in doc.get("z_effects", [])]
    model = ModelSpec(x_effects, z_effects)
    index = ParameterIndex(model, doc["n_waves"] - 1, has_z=doc["h"] > 0 and model.has_z)
    mu = np.array([doc["mu"][name] for name in index.gamma_names])
    sigma = np.diag(doc["sigma_diag"]) if "sigma_diag" in doc else np.asarray(doc["sigma"])
    eta = np.array([doc["eta"][name] for name in index.eta_names]) if index.p2 else np.zeros(0)
    return StudyDesign(G=doc["G"], n=doc["n"], h=doc["h"], n_waves=doc["n_waves"],
                       model=model, mu=mu, sigma=sigma, eta=eta,
                       x_density=doc.get("x_density", 0.12),
                       z_density=doc.get("z_density", 0.2),
                       name=doc.get("name", "study"))


@dataclass
class StudyTruth:
    mu: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray  # (G, p1)
    gamma_names: list[str]
    eta_names: list[str]

    def to_json(self) -> dict:
        return {
            "mu": dict(zip(self.gamma_names, self.mu.tolist())),
            "sigma": self.sigma.tolist(),
            "eta": dict(zip(self.eta_names, self.eta.tolist())),
            "gamma": self.gamma.tolist(),
        }


def draw_group_coefficients(design: StudyDesign, rng: np.random.Generator) -> np.ndarray:
    """gamma ~ N(mu, Sigma) truncated to positive rates; errors if degenerate."""
    index = design.index()
    chol = np.linalg.cholesky(design.sigma)
    nr = index.n_rates
    out = np.empty((design.G, index.p1))
    attempts = 0
    for g in range(design.G):
        while True:
            attempts += 1
            cand = design.mu + chol @ rng.standard_normal(index.p1)
            if (cand[:nr] > 0).all():
                out[g] = cand
                break
            if attempts > 2 * design.G and attempts > 20 and (g + 1) / attempts < 0.5:
                raise ValueError("truncation acceptance below 50%: design is pathological")
    return out


def generate_study(design: StudyDesign, rng: np.random.Generator) -> tuple[PanelDataset, StudyTruth]:
    """Simulate a full multilevel panel under known parameters."""
    index = design.index()
    gamma = draw_group_coefficients(design, rng)
    groups = []
    for g in range(design.G):
        rates = index.rates_spec(gamma[g])
        theta = _theta_map(design.model, index, gamma[g], design.eta)
        n, h = design.n, design.h
        x0 = (rng.random((n, n)) < design.x_density).astype(np.uint8)
        np.fill_diagonal(x0, 0)
        z0 = (rng.random((n, h)) < design.z_density).astype(np.uint8)
        state = JointState(n, h, x0, z0)
        x_waves = [state.x.copy()]
        z_waves = [state.z.copy()]
        for m in range(design.n_waves - 1):
            state, _ = simulate_period(state, rates, theta, _dummy_cov(design, n), rng, period=m)
            x_waves.append(state.x.copy())
            z_waves.append(state.z.copy())
        groups.append(GroupData(
            gid=f"g{g:03d}", n=n,
            x_waves=x_waves, z_waves=z_waves,
            x_masks=[np.ones((n, n), dtype=bool) for _ in x_waves],
            z_masks=[np.ones((n, h), dtype=bool) for _ in z_waves],
        ))
    ds = PanelDataset(groups, h=design.h,
                      second_mode=[f"item{k}" for k in range(design.h)])
    truth = StudyTruth(design.mu.copy(), design.sigma.copy(), design.eta.copy(), gamma,
                       index.gamma_names, index.eta_names)
    return ds, truth


def _dummy_cov(design: StudyDesign, n: int):
    # synthetic designs are structural-only; group covariates would go here
    from .effects import CovariateSet
    return CovariateSet(zbar=design.z_density * design.h)


def _theta_map(model: ModelSpec, index: ParameterIndex, gamma_g, eta):
    tx, tz = index.theta(gamma_g, eta)
    theta = dict(zip(model.x_effects, tx))
    theta.update(dict(zip(model.z_effects, tz)))
    return theta


def reference_design() -> StudyDesign:
    """Desk-scale design exercising every cross-network effect kind."""
    x_effects = [
        EffectDescriptor("outdegree", NET_X, varying=True),
        EffectDescriptor("reciprocity", NET_X, varying=True),
        EffectDescriptor("transitive_triplets", NET_X),
        EffectDescriptor("od", NET_X),
        EffectDescriptor("id", NET_X),
        EffectDescriptor("odd", NET_X),
    ]
    z_effects = [
        EffectDescriptor("outdegree", NET_Z),
        EffectDescriptor("outdegree_activity", NET_Z),
        EffectDescriptor("od", NET_Z),
        EffectDescriptor("id", NET_Z),
        EffectDescriptor("odd", NET_Z),
        EffectDescriptor("od_av", NET_Z),
    ]
    model = ModelSpec(x_effects, z_effects)
    # gamma: [rate:X:1, rate:X:2, rate:Z:1, rate:Z:2, X outdegree, X reciprocity]
    mu = np.array([3.0, 3.0, 3.0, 3.0, -2.0, 1.5])
    sigma = np.diag([0.05] * 6)
    # eta: [X transtrip, X od, X id, X odd, Z outdegree, Z oda, Z od, Z id, Z odd, Z od_av]
    eta = np.array([0.35, -0.05, 0.05, 0.1, -1.6, 0.2, -0.05, 0.05, 0.25, -0.1])
    return StudyDesign(G=30, n=15, h=4, n_waves=3, model=model, mu=mu, sigma=sigma, eta=eta,
                       x_density=0.10, z_density=0.20, name="reference")


def network_only_design(G: int = 21, n: int = 12, n_waves: int = 3) -> StudyDesign:
    """All-varying one-mode design for prior-sensitivity and reference-prior studies."""
    x_effects = [
        EffectDescriptor("outdegree", NET_X, varying=True),
        EffectDescriptor("reciprocity", NET_X, varying=True),
        EffectDescriptor("transitive_triplets", NET_X, varying=True),
        EffectDescriptor("three_cycles", NET_X, varying=True),
    ]
    model = ModelSpec(x_effects, [])
    periods = n_waves - 1
    mu = np.concatenate([np.full(periods, 2.5), [-1.8, 1.2, 0.25, -0.15]])
    sigma = np.diag([0.15] * periods + [0.04, 0.04, 0.01, 0.01])
    return StudyDesign(G=G, n=n, h=0, n_waves=n_waves, model=model, mu=mu,
                       sigma=sigma, eta=np.zeros(0), x_density=0.15, name="network-only")


@dataclass
class RecoveryReport:
    converged: list[bool]
    coverage: dict
    bias: dict
    pooled_sd: dict

    def to_json(self) -> dict:
        return {"converged": self.converged, "coverage": self.coverage,
                "bias": self.bias, "pooled_sd": self.pooled_sd}


def score_recovery(summaries: list[dict], truth: StudyTruth, rhat_limit: float = 1.05) -> RecoveryReport:
    """Aggregate bias/coverage over replications of one design.

    ``summaries`` holds, per replication, the output of
    :func:`mlsaom.diagnostics.global_summary_table` as a mapping from
    parameter name to (mean, sd, q025, q975, rhat).
    """
    names_mu = [f"mu:{n}" for n in truth.gamma_names]
    names_eta = [f"eta:{n}" for n in truth.eta_names]
    true_vals = dict(zip(names_mu, truth.mu))
    true_vals.update(zip(names_eta, truth.eta))
    converged = []
    cover: dict[str, list[bool]] = {k: [] for k in true_vals}
    bias: dict[str, list[float]] = {k: [] for k in true_vals}
    sds: dict[str, list[float]] = {k: [] for k in true_vals}
    for summ in summaries:
        ok = all(row["rhat"] <= rhat_limit for row in summ.values() if np.isfinite(row["rhat"]))
        converged.append(ok)
        if not ok:
            continue
        for k, tv in true_vals.items():
            row = summ[k]
            cover[k].append(row["q025"] <= tv <= row["q975"])
            bias[k].append(row["mean"] - tv)
            sds[k].append(row["sd"])
    coverage = {k: float(np.mean(v)) if v else float("nan") for k, v in cover.items()}
    mean_bias = {k: float(np.mean(v)) if v else float("nan") for k, v in bias.items()}
    pooled_sd = {k: float(np.sqrt(np.mean(np.square(v)))) if v else float("nan") for k, v in sds.items()}
    return RecoveryReport(converged, coverage, mean_bias, pooled_sd)


def save_design(design: StudyDesign, path) -> None:
    Path(path).write_text(json.dumps(design.to_json(), indent=1) + "\n")


def load_design(path) -> StudyDesign:
    return design_from_json(json.loads(Path(path).read_text()))
