import numpy as np
import pytest

from mlsaom import CovariateSet, EffectDescriptor, JointState


@pytest.fixture
def rng():
    return np.random.default_rng(20240815)


def random_state(rng, n=6, h=3, px=None, pz=None) -> JointState:
    px = rng.random() * 0.6 if px is None else px
    pz = rng.random() * 0.6 if pz is None else pz
    x = (rng.random((n, n)) < px).astype(np.uint8)
    np.fill_diagonal(x, 0)
    z = (rng.random((n, h)) < pz).astype(np.uint8)
    return JointState(n, h, x, z)


def full_covariates(rng, n) -> CovariateSet:
    return CovariateSet(
        actor={
            "sex": rng.integers(1, 3, n).astype(float),
            "advice": rng.random(n) * 8 + 1,
        },
        group={"meanadv": 5.0},
        ranges={"advice": 8.0},
        similarity_mean={"advice": 0.65},
        zbar=0.9,
    )


def all_effects(dependent: str, h: int = 3):
    """Every effect kind applicable to the dependent network."""
    if dependent == "X":
        names = ["outdegree", "reciprocity", "transitive_triplets",
                 "transitive_recip_triplets", "indegree_popularity",
                 "outdegree_activity", "reciprocal_degree_activity",
                 "three_cycles", "log_group_size_activity"]
        if h:
            names += ["od", "id", "odd"]
        effs = [EffectDescriptor(nm, "X") for nm in names]
        effs += [
            EffectDescriptor("covariate_ego", "X", covariate="advice"),
            EffectDescriptor("covariate_same", "X", covariate="sex"),
            EffectDescriptor("covariate_similarity", "X", covariate="advice"),
        ]
        return effs
    names = ["outdegree", "indegree_popularity", "outdegree_activity",
             "log_group_size_activity", "od", "id", "odd", "od_av"]
    effs = [EffectDescriptor(nm, "Z") for nm in names]
    effs += [EffectDescriptor("covariate_ego", "Z", covariate="sex"),
             EffectDescriptor("covariate_ego", "Z", covariate="meanadv")]
    return effs
