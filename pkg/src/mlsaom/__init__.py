"""Multilevel stochastic actor-oriented models for network panel data."""

from .netstate import JointState, Toggle, apply_toggle, hamming, jaccard_stability
from .effects import (
    CovariateSet,
    EffectDescriptor,
    ModelSpec,
    change_scores,
    evaluation,
    statistic,
    statistic_total,
)
from .process import (
    MiniStepPath,
    RateSpec,
    actor_selection_prob,
    choice_distribution,
    exact_loglik,
    log_p_aug,
    simulate_period,
)
from .pathsampler import default_update_count, initial_path, mh_sweep, propose
from .hierbayes import (
    ParamState,
    ParameterIndex,
    PriorConfig,
    RunConfig,
    default_prior,
    gibbs_update_mu,
    gibbs_update_sigma,
    initialize,
    mcmc_run,
)
from .dataio import (
    InclusionCriteria,
    PanelDataset,
    dichotomize,
    filter_groups,
    impute_missing,
    load_dataset,
    write_dataset,
)
from .diagnostics import describe, prior_sweep_summary, rhat, summarize_matrix
from .synthbench import (
    StudyDesign,
    generate_study,
    network_only_design,
    reference_design,
    score_recovery,
)

__all__ = [
    "JointState",
    "Toggle",
    "apply_toggle",
    "hamming",
    "jaccard_stability",
    "CovariateSet",
    "EffectDescriptor",
    "ModelSpec",
    "change_scores",
    "evaluation",
    "statistic",
    "statistic_total",
    "MiniStepPath",
    "RateSpec",
    "actor_selection_prob",
    "choice_distribution",
    "exact_loglik",
    "log_p_aug",
    "simulate_period",
    "initial_path",
    "propose",
    "mh_sweep",
    "default_update_count",
]

__version__ = "0.1.0"
