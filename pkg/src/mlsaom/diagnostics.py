"""Convergence diagnostics, posterior summaries, descriptives, sweep tables.

Everything here is pure post-processing of draw matrices and datasets and
emits plain dictionaries/arrays; rendering lives with the CLI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import PanelDataset
from .netstate import jaccard_stability


def rhat(chains) -> float:
    """Split potential-scale-reduction factor for one scalar parameter.

    Each chain is halved; the usual between/within variance ratio is
    computed over the resulting 2C half-chains.  Identical constant
    chains define R-hat = 1.
    """
    seqs = [np.asarray(c, dtype=float) for c in chains]
    if len(seqs) < 2:
        raise ValueError("need at least two chains")
    length = min(len(s) for s in seqs)
    if length < 10:
        raise ValueError("need at least 10 retained draws per chain")
    half = length // 2
    splits = []
    for s in seqs:
        s = s[:2 * half]
        splits.append(s[:half])
        splits.append(s[half:])
    splits = np.asarray(splits)
    within = splits.var(axis=1, ddof=1).mean()
    between = half * splits.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else math.inf
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


@dataclass
class ParameterSummary:
    mean: float
    sd: float
    q025: float
    q975: float
    rhat: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "q025": self.q025,
                "q975": self.q975, "rhat": self.rhat}


def summarize_matrix(columns: list[str], chains: list[np.ndarray]) -> dict[str, ParameterSummary]:
    """Per-column posterior summaries over pooled chains, with split R-hat."""
    pooled = np.vstack(chains)
    out = {}
    for j, name in enumerate(columns):
        col = pooled[:, j]
        r = rhat([c[:, j] for c in chains]) if len(chains) >= 2 else float("nan")
        out[name] = ParameterSummary(
            mean=float(col.mean()),
            sd=float(col.std(ddof=1)) if len(col) > 1 else 0.0,
            q025=float(np.quantile(col, 0.025)),
            q975=float(np.quantile(col, 0.975)),
            rhat=r,
        )
    return out


def global_summary_table(columns, chains) -> dict[str, dict]:
    """Summaries of the global parameters (mu, sigma, eta) as plain dicts."""
    keep = [j for j, c in enumerate(columns) if not c.startswith("gamma:")]
    sub_cols = [columns[j] for j in keep]
    sub_chains = [c[:, keep] for c in chains]
    return {k: v.as_dict() for k, v in summarize_matrix(sub_cols, sub_chains).items()}


def between_sd_table(columns, chains) -> dict[str, float]:
    """Posterior mean of sqrt(Sigma_kk) per varying coefficient."""
    pooled = np.vstack(chains)
    names = [c[len("mu:"):] for c in columns if c.startswith("mu:")]
    out = {}
    for k, name in enumerate(names):
        col = f"sigma:{k}:{k}"
        j = columns.index(col)
        out[name] = float(np.sqrt(pooled[:, j]).mean())
    return out


def group_effect_table(columns, chains) -> dict[str, dict]:
    """Per (group, effect): posterior mean, 95% interval, Pr(gamma > 0)."""
    pooled = np.vstack(chains)
    out = {}
    for j, c in enumerate(columns):
        if not c.startswith("gamma:"):
            continue
        col = pooled[:, j]
        out[c] = {
            "mean": float(col.mean()),
            "q025": float(np.quantile(col, 0.025)),
            "q975": float(np.quantile(col, 0.975)),
            "prob_positive": float((col > 0).mean()),
        }
    return out


# ---------------------------------------------------------------------------
# Descriptive statistics

def _reciprocity(x: np.ndarray) -> float:
    ties = x.sum()
    if ties == 0:
        return float("nan")
    return float((x * x.T).sum() / ties)


def _transitivity(x: np.ndarray) -> float:
    x = x.astype(np.int64)
    two_paths = (x @ x).sum() - (x * x.T).sum()  # i->j->h with h != i
    if two_paths == 0:
        return float("nan")
    closed = (x * (x @ x)).sum()
    return float(closed / two_paths)


def _nanmean(vals) -> float:
    finite = [v for v in vals if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


def describe(ds: PanelDataset) -> dict:
    """Wave-level network descriptives and actor-covariate variance components."""
    waves = ds.n_waves
    net_rows = []
    for m in range(waves):
        row = {"wave": m}
        for label, get_w, get_m in (("x", lambda g: g.x_waves, lambda g: g.x_masks),
                                    ("z", lambda g: g.z_waves, lambda g: g.z_masks)):
            if label == "z" and ds.h == 0:
                continue
            outdeg_mean, outdeg_sd, indeg_sd, recip, trans, jacc, miss = [], [], [], [], [], [], []
            for g in ds.groups:
                w = get_w(g)[m]
                mask = get_m(g)[m]
                outdeg = w.sum(axis=1)
                outdeg_mean.append(outdeg.mean())
                outdeg_sd.append(outdeg.std(ddof=0))
                indeg_sd.append(w.sum(axis=0).std(ddof=0))
                miss.append(1.0 - mask.mean() if mask.size else 0.0)
                if label == "x":
                    recip.append(_reciprocity(w))
                    trans.append(_transitivity(w))
                if m + 1 < waves:
                    try:
                        jacc.append(jaccard_stability(w, get_w(g)[m + 1]))
                    except ValueError:
                        jacc.append(float("nan"))
            row[f"{label}_mean_outdegree"] = float(np.mean(outdeg_mean))
            row[f"{label}_sd_outdegree"] = float(np.mean(outdeg_sd))
            row[f"{label}_sd_indegree"] = float(np.mean(indeg_sd))
            row[f"{label}_missing"] = float(np.mean(miss))
            if label == "x":
                row["x_reciprocity"] = float(np.nanmean(recip)) if recip else float("nan")
                row["x_transitivity"] = float(np.nanmean(trans)) if trans else float("nan")
            if m + 1 < waves:
                row[f"{label}_jaccard_next"] = float(np.nanmean(jacc))
        net_rows.append(row)

    cov_rows = []
    for name in ds.actor_covariate_names():
        values, labels = [], []
        for gi, g in enumerate(ds.groups):
            v = g.actor_covariates.get(name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            keep = np.isfinite(v)
            values.append(v[keep])
            labels.append(np.full(keep.sum(), gi))
        if not values:
            continue
        y = np.concatenate(values)
        lab = np.concatenate(labels)
        cov_rows.append({"covariate": name, **variance_components(y, lab)})
    if ds.h:
        for m in range(waves):
            y = np.concatenate([g.z_waves[m].sum(axis=1) for g in ds.groups]).astype(float)
            lab = np.concatenate([np.full(g.n, gi) for gi, g in enumerate(ds.groups)])
            cov_rows.append({"covariate": f"z_outdegree_wave{m}", **variance_components(y, lab)})
    return {"networks": net_rows, "covariates": cov_rows}


def variance_components(y: np.ndarray, groups: np.ndarray) -> dict:
    """ANOVA within/between decomposition and intraclass correlation.

    Groups are weighted by size via the usual n-tilde correction.
    """
    ids = np.unique(groups)
    G = len(ids)
    N = len(y)
    if G < 2 or N <= G:
        return {"mean": float(np.mean(y)), "within_sd": float("nan"),
                "between_sd": float("nan"), "icc": float("nan")}
    group_means = np.array([y[groups == g].mean() for g in ids])
    sizes = np.array([(groups == g).sum() for g in ids])
    grand = y.mean()
    ssw = sum(((y[groups == g] - y[groups == g].mean()) ** 2).sum() for g in ids)
    msw = ssw / (N - G)
    msb = float((sizes * (group_means - grand) ** 2).sum() / (G - 1))
    n_tilde = (N - (sizes ** 2).sum() / N) / (G - 1)
    tau2 = max((msb - msw) / n_tilde, 0.0)
    icc = tau2 / (tau2 + msw) if tau2 + msw > 0 else 0.0
    return {"mean": float(grand), "within_sd": float(math.sqrt(msw)),
            "between_sd": float(math.sqrt(tau2)), "icc": float(icc)}


# ---------------------------------------------------------------------------
# Prior-sensitivity sweeps

def prior_sweep_summary(fits: dict, rng: np.random.Generator | None = None,
                        n_pred: int = 4000) -> list[dict]:
    """CI table across prior scales.

    ``fits`` maps sigma0_sq to (columns, chains).  Per scale and per mu
    component: posterior mean, sd, central 95% and 99% intervals; plus
    equal-tailed 95% prediction intervals for a new group's coefficients,
    from posterior-predictive draws gamma ~ N(mu, Sigma).
    """
    if len(fits) < 1:
        raise ValueError("need at least one fit")
    rng = rng or np.random.default_rng(0)
    rows = []
    for s0 in sorted(fits):
        columns, chains = fits[s0]
        pooled = np.vstack(chains)
        mu_idx = [j for j, c in enumerate(columns) if c.startswith("mu:")]
        names = [columns[j][len("mu:"):] for j in mu_idx]
        p1 = len(mu_idx)
        tril = [(i, j) for i in range(p1) for j in range(i + 1)]
        sig_idx = {ij: columns.index(f"sigma:{ij[0]}:{ij[1]}") for ij in tril}
        take = rng.choice(len(pooled), size=min(n_pred, len(pooled)), replace=False)
        preds = np.empty((len(take), p1))
        for t, d in enumerate(take):
            mu = pooled[d, mu_idx]
            S = np.zeros((p1, p1))
            for (i, j), col in sig_idx.items():
                S[i, j] = S[j, i] = pooled[d, col]
            w, V = np.linalg.eigh(S)
            L = V @ np.diag(np.sqrt(np.maximum(w, 0.0)))
            preds[t] = mu + L @ rng.standard_normal(p1)
        for k, name in enumerate(names):
            col = pooled[:, mu_idx[k]]
            rows.append({
                "sigma0_sq": float(s0),
                "parameter": name,
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)),
                "q025": float(np.quantile(col, 0.025)),
                "q975": float(np.quantile(col, 0.975)),
                "q005": float(np.quantile(col, 0.005)),
                "q995": float(np.quantile(col, 0.995)),
                "pred_q025": float(np.quantile(preds[:, k], 0.025)),
                "pred_q975": float(np.quantile(preds[:, k], 0.975)),
            })
    return rows
