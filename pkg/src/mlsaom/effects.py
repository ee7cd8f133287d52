"""Evaluation-function statistics, their change scores, and model specification.

Each effect is a function s_k(y) of the joint network state local to one
actor; the evaluation function for a network is the weighted sum of its
effects.  Change scores (the difference in the evaluation function under a
single toggle) are computed with closed-form deltas; ``statistic`` is the
from-scratch definition used as the reference in tests and for
method-of-moments targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .netstate import NET_X, NET_Z, JointState, Toggle

# Effect names are the stable identifiers used in config files.
STRUCTURAL_EFFECTS = (
    "outdegree",
    "reciprocity",
    "transitive_triplets",
    "transitive_recip_triplets",
    "indegree_popularity",
    "outdegree_activity",
    "reciprocal_degree_activity",
    "three_cycles",
)
COVARIATE_EFFECTS = ("covariate_ego", "covariate_same", "covariate_similarity")
SCALING_EFFECTS = ("log_group_size_activity",)
CROSS_EFFECTS = ("od", "id", "odd", "od_av")
EFFECT_NAMES = STRUCTURAL_EFFECTS + COVARIATE_EFFECTS + SCALING_EFFECTS + CROSS_EFFECTS

# Effects only defined when the dependent network is one-mode.
X_ONLY = {
    "reciprocity",
    "transitive_triplets",
    "transitive_recip_triplets",
    "reciprocal_degree_activity",
    "three_cycles",
    "covariate_same",
    "covariate_similarity",
}
Z_ONLY = {"od_av"}
# Effects that couple the two networks (need h > 0 / both networks modelled).
NEEDS_BOTH = set(CROSS_EFFECTS)


@dataclass(frozen=True)
class EffectDescriptor:
    """One term of an evaluation function.

    ``varying`` marks the coefficient as group-varying (a random
    coefficient) rather than constant across groups.
    """

    name: str
    dependent_network: str
    covariate: str | None = None
    varying: bool = False

    def __post_init__(self):
        if self.name not in EFFECT_NAMES:
            raise ValueError(f"unknown effect name {self.name!r}")
        if self.dependent_network not in (NET_X, NET_Z):
            raise ValueError(f"bad dependent network {self.dependent_network!r}")
        if self.name in X_ONLY and self.dependent_network != NET_X:
            raise ValueError(f"effect {self.name} only applies to the one-mode network")
        if self.name in Z_ONLY and self.dependent_network != NET_Z:
            raise ValueError(f"effect {self.name} only applies to the two-mode network")
        if self.name in COVARIATE_EFFECTS:
            if not self.covariate:
                raise ValueError(f"effect {self.name} requires a covariate reference")
        elif self.covariate is not None:
            raise ValueError(f"structural effect {self.name} takes no covariate")

    @property
    def key(self) -> str:
        """Stable column label, e.g. ``X:covariate_same:sex``."""
        if self.covariate:
            return f"{self.dependent_network}:{self.name}:{self.covariate}"
        return f"{self.dependent_network}:{self.name}"


@dataclass
class CovariateSet:
    """Actor and group covariates of one group, plus frozen scaling constants.

    ``similarity_mean`` holds, per covariate, the observed mean of the
    dyadic similarity values 1 - |B_i - B_j| / range(B) over all ordered
    pairs; similarity statistics are centered by subtracting it.  ``zbar``
    is the average observed two-mode outdegree of the group, frozen once
    from the data.
    """

    actor: dict[str, np.ndarray] = field(default_factory=dict)
    group: dict[str, float] = field(default_factory=dict)
    ranges: dict[str, float] = field(default_factory=dict)
    similarity_mean: dict[str, float] = field(default_factory=dict)
    zbar: float = 0.0

    def ego_values(self, name: str, n: int) -> np.ndarray:
        """Per-actor values for an ego effect; group covariates broadcast."""
        if name in self.actor:
            v = np.asarray(self.actor[name], dtype=float)
            if v.shape != (n,):
                raise ValueError(f"covariate {name!r} has length {v.shape}, expected {n}")
            return v
        if name in self.group:
            return np.full(n, float(self.group[name]))
        raise KeyError(f"covariate {name!r} not present")

    def actor_values(self, name: str, n: int) -> np.ndarray:
        if name not in self.actor:
            raise KeyError(f"actor covariate {name!r} not present")
        return self.ego_values(name, n)

    def similarity(self, name: str, n: int) -> np.ndarray:
        """Centered dyadic similarity matrix for a covariate."""
        v = self.actor_values(name, n)
        rng = self.ranges.get(name)
        if rng is None or rng <= 0:
            raise ValueError(f"covariate {name!r} lacks a positive range for similarity")
        sim = 1.0 - np.abs(v[:, None] - v[None, :]) / rng
        return sim - self.similarity_mean.get(name, 0.0)

    @staticmethod
    def centering_constants(values: np.ndarray, rng: float) -> float:
        """Mean dyadic similarity over ordered pairs (the centering constant)."""
        n = len(values)
        if n < 2:
            return 0.0
        sim = 1.0 - np.abs(values[:, None] - values[None, :]) / rng
        mask = ~np.eye(n, dtype=bool)
        return float(sim[mask].mean())


def _check(effect: EffectDescriptor, state: JointState):
    if effect.dependent_network == NET_Z and state.h == 0:
        raise ValueError(f"effect {effect.key}: state has no two-mode network")
    if effect.name in NEEDS_BOTH and state.h == 0:
        raise ValueError(f"effect {effect.key}: cross-network effect needs a two-mode network")


def statistic(effect: EffectDescriptor, state: JointState, cov: CovariateSet, i: int) -> float:
    """Value of the effect statistic for actor ``i`` in the given state."""
    _check(effect, state)
    x, z, n = state.x, state.z, state.n
    name, net = effect.name, effect.dependent_network
    row = x[i].astype(np.int64)
    zrow = z[i].astype(np.int64) if state.h else np.zeros(0, dtype=np.int64)
    xout, xin = int(state.xout[i]), int(state.xin[i])
    zdeg = int(state.zout[i]) if state.h else 0

    if net == NET_X:
        if name == "outdegree":
            return float(xout)
        if name == "reciprocity":
            return float(row @ x[:, i].astype(np.int64))
        if name == "transitive_triplets":
            two_path = row @ x.astype(np.int64)  # i->h->j counts
            return float(row @ two_path)
        if name == "transitive_recip_triplets":
            two_path = row @ x.astype(np.int64)
            mutual = row * x[:, i].astype(np.int64)
            return float(mutual @ two_path)
        if name == "indegree_popularity":
            return float(xout * xin)
        if name == "outdegree_activity":
            return float(xout * xout)
        if name == "reciprocal_degree_activity":
            rdeg = int(row @ x[:, i].astype(np.int64))
            return float(xout * rdeg)
        if name == "three_cycles":
            return float(row @ x.astype(np.int64) @ x[:, i].astype(np.int64))
        if name == "covariate_ego":
            return float(xout * cov.ego_values(effect.covariate, n)[i])
        if name == "covariate_same":
            v = cov.actor_values(effect.covariate, n)
            return float(row @ (v == v[i]).astype(np.int64))
        if name == "covariate_similarity":
            return float(row @ cov.similarity(effect.covariate, n)[i])
        if name == "log_group_size_activity":
            return float(math.log(n) * xout)
        if name == "od":
            return float(xout * zdeg)
        if name == "id":
            return float(row @ state.zout)
        if name == "odd":
            return float(row @ (z.astype(np.int64) @ zrow))
    else:
        if name == "outdegree":
            return float(zdeg)
        if name == "indegree_popularity":
            return float(zrow @ state.zin)
        if name == "outdegree_activity":
            return float(zdeg * zdeg)
        if name == "covariate_ego":
            return float(zdeg * cov.ego_values(effect.covariate, n)[i])
        if name == "log_group_size_activity":
            return float(math.log(n) * zdeg)
        if name == "od":
            return float(xout * zdeg)
        if name == "id":
            return float(xin * zdeg)
        if name == "odd":
            return float(row @ (z.astype(np.int64) @ zrow))
        if name == "od_av":
            if xout == 0:
                return 0.0  # 0/0 convention
            friend_excess = row @ (state.zout - cov.zbar)
            return float(zdeg * friend_excess / xout)
    raise ValueError(f"effect {name} not applicable to network {net}")


def statistic_total(effect: EffectDescriptor, state: JointState, cov: CovariateSet) -> float:
    """Sum of the effect statistic over all actors (method-of-moments target)."""
    _check(effect, state)
    x = state.x.astype(np.int64)
    z = state.z.astype(np.int64) if state.h else np.zeros((state.n, 0), dtype=np.int64)
    n = state.n
    name, net = effect.name, effect.dependent_network
    xout, xin, zout, zin = state.xout, state.xin, state.zout, state.zin

    if net == NET_X:
        if name == "outdegree":
            return float(xout.sum())
        if name == "reciprocity":
            return float((x * x.T).sum())
        if name == "transitive_triplets":
            return float((x * (x @ x)).sum())
        if name == "transitive_recip_triplets":
            return float(((x * x.T) * (x @ x)).sum())
        if name == "indegree_popularity":
            return float((xout * xin).sum())
        if name == "outdegree_activity":
            return float((xout * xout).sum())
        if name == "reciprocal_degree_activity":
            return float((xout * (x * x.T).sum(axis=1)).sum())
        if name == "three_cycles":
            return float((x * (x @ x).T).sum())
        if name == "covariate_ego":
            return float(xout @ cov.ego_values(effect.covariate, n))
        if name == "covariate_same":
            v = cov.actor_values(effect.covariate, n)
            return float((x * (v[:, None] == v[None, :])).sum())
        if name == "covariate_similarity":
            return float((x * cov.similarity(effect.covariate, n)).sum())
        if name == "log_group_size_activity":
            return float(math.log(n) * xout.sum())
        if name == "od":
            return float(xout @ zout)
        if name == "id":
            return float((x @ zout).sum())
        if name == "odd":
            return float((x * (z @ z.T)).sum())
    else:
        if name == "outdegree":
            return float(zout.sum())
        if name == "indegree_popularity":
            return float((z @ zin).sum())
        if name == "outdegree_activity":
            return float((zout * zout).sum())
        if name == "covariate_ego":
            return float(zout @ cov.ego_values(effect.covariate, n))
        if name == "log_group_size_activity":
            return float(math.log(n) * zout.sum())
        if name == "od":
            return float(xout @ zout)
        if name == "id":
            return float(xin @ zout)
        if name == "odd":
            return float((x * (z @ z.T)).sum())
        if name == "od_av":
            excess = x @ (zout - cov.zbar)
            safe_out = np.where(xout > 0, xout, 1)
            w = np.where(xout > 0, excess / safe_out, 0.0)
            return float(zout @ w)
    raise ValueError(f"effect {name} not applicable to network {net}")


def evaluation(theta, state: JointState, cov: CovariateSet, i: int, network: str) -> float:
    """Evaluation function f_i(theta, y) = sum_k theta_k s_k(y) for one network.

    ``theta`` maps :class:`EffectDescriptor` to coefficient; every effect
    must have the given dependent network.
    """
    total = 0.0
    for eff, coef in theta.items():
        if eff.dependent_network != network:
            raise ValueError(f"coefficient for {eff.key} used in network {network}")
        total += coef * statistic(eff, state, cov, i)
    return total


def change_vector(theta, state: JointState, cov: CovariateSet, i: int, network: str) -> np.ndarray:
    """Change scores for every option of actor ``i`` in one network.

    For network X the returned vector has length n with slot ``i`` holding
    the no-change score (exactly 0); for network Z it has length h+1 with
    the last slot as no-change.  Entry j is f(y with the tie toggled) - f(y).
    """
    x, z, n, h = state.x, state.z, state.n, state.h
    if network == NET_X:
        out = np.zeros(n)
        row = x[i].astype(np.int64)
        d = 1.0 - 2.0 * row
        xout, xin = float(state.xout[i]), float(state.xin[i])
        zdeg = float(state.zout[i]) if h else 0.0
        for eff, coef in theta.items():
            if eff.dependent_network != NET_X:
                raise ValueError(f"coefficient for {eff.key} used in network X")
            _check(eff, state)
            name = eff.name
            if name == "outdegree":
                out += coef * d
            elif name == "reciprocity":
                out += coef * d * x[:, i]
            elif name == "transitive_triplets":
                two_path = row @ x.astype(np.int64)
                common_out = x.astype(np.int64) @ row
                out += coef * d * (two_path + common_out)
            elif name == "transitive_recip_triplets":
                two_path = row @ x.astype(np.int64)
                mutual = row * x[:, i].astype(np.int64)
                out += coef * d * (x[:, i] * two_path + x.astype(np.int64) @ mutual)
            elif name == "indegree_popularity":
                out += coef * d * xin
            elif name == "outdegree_activity":
                out += coef * (2.0 * d * xout + 1.0)
            elif name == "reciprocal_degree_activity":
                rdeg = float(row @ x[:, i].astype(np.int64))
                out += coef * (d * rdeg + x[:, i] * (d * xout + 1.0))
            elif name == "three_cycles":
                out += coef * d * (x.astype(np.int64) @ x[:, i].astype(np.int64))
            elif name == "covariate_ego":
                out += coef * d * cov.ego_values(eff.covariate, n)[i]
            elif name == "covariate_same":
                v = cov.actor_values(eff.covariate, n)
                out += coef * d * (v == v[i])
            elif name == "covariate_similarity":
                out += coef * d * cov.similarity(eff.covariate, n)[i]
            elif name == "log_group_size_activity":
                out += coef * d * math.log(n)
            elif name == "od":
                out += coef * d * zdeg
            elif name == "id":
                out += coef * d * state.zout
            elif name == "odd":
                out += coef * d * (z.astype(np.int64) @ z[i].astype(np.int64))
            else:
                raise ValueError(f"effect {name} not applicable to network X")
        out[i] = 0.0
        return out

    if h == 0:
        raise ValueError("state has no two-mode network")
    out = np.zeros(h + 1)
    zrow = z[i].astype(np.int64)
    d = 1.0 - 2.0 * zrow
    xout, xin = float(state.xout[i]), float(state.xin[i])
    zdeg = float(state.zout[i])
    for eff, coef in theta.items():
        if eff.dependent_network != NET_Z:
            raise ValueError(f"coefficient for {eff.key} used in network Z")
        name = eff.name
        if name == "outdegree":
            out[:h] += coef * d
        elif name == "indegree_popularity":
            out[:h] += coef * d * (state.zin + zrow + d)
        elif name == "outdegree_activity":
            out[:h] += coef * (2.0 * d * zdeg + 1.0)
        elif name == "covariate_ego":
            out[:h] += coef * d * cov.ego_values(eff.covariate, state.n)[i]
        elif name == "log_group_size_activity":
            out[:h] += coef * d * math.log(state.n)
        elif name == "od":
            out[:h] += coef * d * xout
        elif name == "id":
            out[:h] += coef * d * xin
        elif name == "odd":
            out[:h] += coef * d * (x[i].astype(np.int64) @ z.astype(np.int64))
        elif name == "od_av":
            if xout > 0:
                w = float(x[i].astype(np.int64) @ (state.zout - cov.zbar)) / xout
            else:
                w = 0.0
            out[:h] += coef * d * w
        else:
            raise ValueError(f"effect {name} not applicable to network Z")
    out[h] = 0.0
    return out


def change_scores(theta, state: JointState, cov: CovariateSet, i: int, network: str) -> dict[Toggle, float]:
    """Map each option in the actor's option set to its change score."""
    vec = change_vector(theta, state, cov, i, network)
    scores: dict[Toggle, float] = {Toggle(i, network, None): 0.0}
    if network == NET_X:
        for j in range(state.n):
            if j != i:
                scores[Toggle(i, NET_X, j)] = float(vec[j])
    else:
        for k in range(state.h):
            scores[Toggle(i, NET_Z, k)] = float(vec[k])
    return scores


@dataclass
class ModelSpec:
    """Effect lists per dependent network with covariate bindings."""

    x_effects: list[EffectDescriptor] = field(default_factory=list)
    z_effects: list[EffectDescriptor] = field(default_factory=list)

    def __post_init__(self):
        for eff in self.x_effects:
            if eff.dependent_network != NET_X:
                raise ValueError(f"{eff.key} listed under the one-mode network")
        for eff in self.z_effects:
            if eff.dependent_network != NET_Z:
                raise ValueError(f"{eff.key} listed under the two-mode network")
        keys = [e.key for e in self.x_effects + self.z_effects]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate effect in model specification")

    def effects(self, network: str) -> list[EffectDescriptor]:
        return self.x_effects if network == NET_X else self.z_effects

    @property
    def has_z(self) -> bool:
        return bool(self.z_effects)

    def theta_map(self, network: str, values) -> dict[EffectDescriptor, float]:
        lst = self.effects(network)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(lst),):
            raise ValueError(f"expected {len(lst)} coefficients for network {network}")
        return dict(zip(lst, map(float, values)))

    def validate_against(self, h: int, covariate_names, group_covariate_names) -> None:
        """Cross-check effect requirements against the data at hand."""
        for eff in self.x_effects + self.z_effects:
            if eff.name in NEEDS_BOTH and h == 0:
                raise ValueError(f"{eff.key} needs a two-mode network but data has none")
            if eff.covariate is not None:
                known = set(covariate_names) | set(group_covariate_names)
                if eff.covariate not in known:
                    raise ValueError(f"{eff.key} references unknown covariate {eff.covariate!r}")
                if eff.name in ("covariate_same", "covariate_similarity") and eff.covariate not in covariate_names:
                    raise ValueError(f"{eff.key} needs an actor-level covariate")
        if self.z_effects and h == 0:
            raise ValueError("model specifies two-mode effects but data has no second mode")
