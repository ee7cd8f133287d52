"""Shipped model specifications.

``classroom_model`` is the friendship/delinquency specification used in the
accompanying example config: structural friendship effects with homophily
terms, delinquency-network degree effects, and the four cross-network
effects in both directions.
"""
from __future__ import annotations

from .effects import EffectDescriptor, ModelSpec
from .netstate import NET_X, NET_Z


def classroom_model() -> ModelSpec:
    """Friendship x delinquency specification with the usual random effects.

    Varying coefficients: friendship outdegree, reciprocity,
    indegree-popularity, reciprocal degree-activity, transitive triplets,
    same language, advice similarity; delinquency outdegree and
    outdegree-activity (rates are always varying).
    """
    x = [
        EffectDescriptor("outdegree", NET_X, varying=True),
        EffectDescriptor("reciprocity", NET_X, varying=True),
        EffectDescriptor("transitive_triplets", NET_X, varying=True),
        EffectDescriptor("transitive_recip_triplets", NET_X),
        EffectDescriptor("indegree_popularity", NET_X, varying=True),
        EffectDescriptor("outdegree_activity", NET_X),
        EffectDescriptor("reciprocal_degree_activity", NET_X, varying=True),
        EffectDescriptor("covariate_same", NET_X, covariate="sex"),
        EffectDescriptor("log_group_size_activity", NET_X),
        EffectDescriptor("covariate_similarity", NET_X, covariate="advice", varying=True),
        EffectDescriptor("covariate_same", NET_X, covariate="language", varying=True),
        EffectDescriptor("id", NET_X),
        EffectDescriptor("od", NET_X),
        EffectDescriptor("odd", NET_X),
    ]
    z = [
        EffectDescriptor("outdegree", NET_Z, varying=True),
        EffectDescriptor("indegree_popularity", NET_Z),
        EffectDescriptor("outdegree_activity", NET_Z, varying=True),
        EffectDescriptor("covariate_ego", NET_Z, covariate="sex"),
        EffectDescriptor("covariate_ego", NET_Z, covariate="advice"),
        EffectDescriptor("covariate_ego", NET_Z, covariate="advice_mean"),
        EffectDescriptor("id", NET_Z),
        EffectDescriptor("od", NET_Z),
        EffectDescriptor("odd", NET_Z),
        EffectDescriptor("od_av", NET_Z),
    ]
    return ModelSpec(x, z)


def model_config(model: ModelSpec) -> dict:
    """JSON-ready model section for a ModelSpec."""
    def enc(effects):
        out = []
        for e in effects:
            d = {"name": e.name}
            if e.covariate:
                d["covariate"] = e.covariate
            if e.varying:
                d["varying"] = True
            out.append(d)
        return out

    return {"x_effects": enc(model.x_effects), "z_effects": enc(model.z_effects)}
