"""Gibbs conditionals, MH updates on known targets, priors, and the initializer."""
import math

import numpy as np
import pytest
import scipy.stats

from mlsaom import (
    EffectDescriptor,
    ModelSpec,
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
from mlsaom.hierbayes import (
    HierSampler,
    initial_rate_value,
    mvn_logpdf,
    sigma_posterior_params,
    _chol_psd,
)
from mlsaom.netstate import NET_X, NET_Z
from mlsaom.synthbench import generate_study, network_only_design, reference_design
from mlsaom.process import log_p_aug


def small_prior(p1, mode="conjugate", kappa0=1.0):
    return PriorConfig(mode, np.zeros(p1), kappa0, np.eye(p1), p1 + 3,
                       np.zeros(0), np.zeros(0))


def test_parameter_index_layout():
    model = ModelSpec(
        [EffectDescriptor("outdegree", NET_X, varying=True),
         EffectDescriptor("reciprocity", NET_X)],
        [EffectDescriptor("outdegree", NET_Z)],
    )
    idx = ParameterIndex(model, n_periods=2)
    assert idx.n_rates == 4  # two networks x two periods
    assert idx.p1 == 5 and idx.p2 == 2
    gamma = np.array([1.0, 2.0, 3.0, 4.0, -1.5])
    eta = np.array([0.8, -0.9])
    tx, tz = idx.theta(gamma, eta)
    assert tx.tolist() == [-1.5, 0.8]
    assert tz.tolist() == [-0.9]
    spec = idx.rates_spec(gamma)
    assert spec.lam("X", 1) == 2.0 and spec.lam("Z", 0) == 3.0


def test_gibbs_mu_posterior_mean_example(rng):
    # kappa0 = 1, G = 1, mu0 = 0, gamma = 2: posterior mean 1, covariance Sigma/2
    prior = small_prior(1, kappa0=1.0)
    gamma = np.array([[2.0]])
    sigma = np.array([[0.8]])
    draws = np.array([gibbs_update_mu(gamma, sigma, prior, rng)[0] for _ in range(20000)])
    assert draws.mean() == pytest.approx(1.0, abs=3 * math.sqrt(0.4 / 20000) + 0.01)
    assert draws.var() == pytest.approx(0.4, rel=0.05)


def test_gibbs_mu_prior_dominance_limit(rng):
    prior = small_prior(2, kappa0=1e9)
    prior.mu0 = np.array([3.0, -1.0])
    gamma = rng.normal(size=(5, 2))
    mu = gibbs_update_mu(gamma, np.eye(2), prior, rng)
    assert np.allclose(mu, prior.mu0, atol=1e-3)


def test_gibbs_mu_moments_match_analytic(rng):
    prior = small_prior(2, kappa0=0.5)
    prior.mu0 = np.array([1.0, -2.0])
    gamma = rng.normal(size=(4, 2)) + np.array([0.5, 0.25])
    sigma = np.array([[0.5, 0.1], [0.1, 0.3]])
    G = 4
    want_mean = (G * gamma.mean(0) + 0.5 * prior.mu0) / (0.5 + G)
    want_cov = sigma / (0.5 + G)
    draws = np.array([gibbs_update_mu(gamma, sigma, prior, rng) for _ in range(30000)])
    se = np.sqrt(np.diag(want_cov) / len(draws))
    assert np.all(np.abs(draws.mean(0) - want_mean) < 3 * se)
    assert np.allclose(np.cov(draws.T), want_cov, rtol=0.08)


def test_gibbs_sigma_prior_draw_when_no_data(rng):
    prior = small_prior(2)
    prior.nu0 = 9.0  # keep the draw variance finite for the moment check
    draws = [gibbs_update_sigma(np.zeros((0, 2)), prior, rng) for _ in range(20000)]
    mean = np.mean(draws, axis=0)
    want = prior.Lambda0 / (prior.nu0 - 2 - 1)  # inverse-Wishart expectation
    assert np.allclose(mean, want, rtol=0.08, atol=0.01)


def test_gibbs_sigma_zero_scatter():
    prior = small_prior(3)
    gamma = np.tile(prior.mu0, (4, 1))
    Lam, df = sigma_posterior_params(gamma, prior)
    assert np.allclose(Lam, prior.Lambda0)
    assert df == prior.nu0 + 4


def test_gibbs_sigma_moments_match_analytic(rng):
    prior = small_prior(2, kappa0=0.7)
    gamma = rng.normal(size=(6, 2))
    Lam, df = sigma_posterior_params(gamma, prior)
    want = Lam / (df - 2 - 1)
    draws = np.array([gibbs_update_sigma(gamma, prior, rng) for _ in range(20000)])
    mean = draws.mean(axis=0)
    assert np.allclose(mean, want, rtol=0.08)


def test_jeffreys_modes(rng):
    gamma = rng.normal(size=(8, 2))
    pj = small_prior(2, mode="jeffreys")
    Lam, df = sigma_posterior_params(gamma, pj)
    dev = gamma - gamma.mean(0)
    assert np.allclose(Lam, dev.T @ dev)
    assert df == 8
    pij = small_prior(2, mode="independence-jeffreys")
    _, df2 = sigma_posterior_params(gamma, pij)
    assert df2 == 7
    # mu update collapses to the group mean under kappa0 -> 0
    draws = np.array([gibbs_update_mu(gamma, 0.001 * np.eye(2), pj, rng) for _ in range(4000)])
    assert np.allclose(draws.mean(0), gamma.mean(0), atol=0.01)
    with pytest.raises(ValueError):
        sigma_posterior_params(rng.normal(size=(3, 2)), pj)  # G too small


def test_prior_validation():
    p = small_prior(3)
    p.nu0 = 3.5  # <= p1 + 1
    with pytest.raises(ValueError):
        p.validate()
    pj = small_prior(3, mode="jeffreys")
    with pytest.raises(ValueError):
        pj.validate(G=4)
    with pytest.raises(ValueError):
        PriorConfig("nonsense", np.zeros(2), 1.0, np.eye(2), 5.0, np.zeros(0), np.zeros(0))


def build_index(p_varying=9, n_periods=2, group_cov=False):
    x = [EffectDescriptor("outdegree", NET_X, varying=True),
         EffectDescriptor("reciprocity", NET_X, varying=True),
         EffectDescriptor("transitive_triplets", NET_X, varying=True),
         EffectDescriptor("indegree_popularity", NET_X, varying=True),
         EffectDescriptor("reciprocal_degree_activity", NET_X, varying=True),
         EffectDescriptor("covariate_same", NET_X, covariate="language", varying=True),
         EffectDescriptor("covariate_similarity", NET_X, covariate="advice", varying=True),
         EffectDescriptor("log_group_size_activity", NET_X),
         EffectDescriptor("covariate_ego", NET_X, covariate="sex")]
    z = [EffectDescriptor("outdegree", NET_Z, varying=True),
         EffectDescriptor("outdegree_activity", NET_Z, varying=True),
         EffectDescriptor("covariate_ego", NET_Z, covariate="advice_mean")]
    return ParameterIndex(ModelSpec(x, z), n_periods)


def test_default_prior_recorded_values():
    # 9 varying effects + 4 rates: the 13-dimensional case with nu0 = 15
    idx = build_index()
    assert idx.p1 == 13
    prior = default_prior(idx, group_covariates=("advice_mean",))
    assert prior.nu0 == 15.0
    assert prior.kappa0 == 0.01
    names = idx.gamma_names
    assert prior.mu0[names.index("X:outdegree")] == -2.0
    assert prior.mu0[names.index("X:reciprocity")] == 1.0
    assert prior.mu0[names.index("X:transitive_triplets")] == pytest.approx(0.2)
    assert prior.mu0[names.index("Z:outdegree")] == -2.0
    diag = np.diag(prior.Lambda0) / prior.nu0
    assert diag[names.index("X:outdegree")] == pytest.approx(0.1)
    assert diag[names.index("Z:outdegree")] == pytest.approx(0.1)
    assert diag[names.index("X:reciprocity")] == pytest.approx(0.01)
    # flat priors on eta except group-level covariate effects: N(0, 0.04)
    eta_names = idx.eta_names
    k = eta_names.index("Z:covariate_ego:advice_mean")
    assert prior.eta_var[k] == pytest.approx(0.04)
    assert prior.eta_mean[k] == 0.0
    k2 = eta_names.index("X:log_group_size_activity")
    assert prior.eta_var[k2] == pytest.approx(0.04)
    assert np.isinf(prior.eta_var[eta_names.index("X:covariate_ego:sex")])


def test_rate_hyperparameter_installation():
    idx = build_index()
    prior = default_prior(idx)
    rm = np.array([2.0, 2.5, 3.0, 3.5])
    rc = np.diag([0.2, 0.2, 0.3, 0.3])
    prior.apply_rate_hyperparameters(rm, rc)
    assert np.allclose(prior.mu0[:4], rm)
    assert np.allclose(np.diag(prior.Lambda0)[:4] / prior.nu0, np.diag(rc))


def flat_sampler(G=6, p_varying=2, seed=0, kappa0=1.0, sigma_scale=0.3, rate_mean=5.0):
    """Sampler on a trivial dataset with the data term flattened."""
    design = network_only_design(G=G, n=4, n_waves=2)
    ds, _ = generate_study(design, np.random.default_rng(seed))
    idx = design.index()
    p1 = idx.p1
    prior = PriorConfig("conjugate", np.full(p1, rate_mean), kappa0,
                        sigma_scale * (p1 + 3) * np.eye(p1), p1 + 3,
                        np.zeros(0), np.zeros(0))
    init = ParamState(np.tile(prior.mu0, (G, 1)), np.zeros(0),
                      prior.mu0.copy(), sigma_scale * np.eye(p1))
    covs = {"gamma": [0.25 * np.eye(p1)] * G,
            "eta": np.eye(1), "shift": 0.05 * np.eye(p1 - idx.n_rates)}
    run = RunConfig(steps=10, warmup=5, chains=1, seed=seed)
    return HierSampler(ds, design.model, prior, run, init, covs,
                       np.random.SeedSequence(seed), flatten_data=True), idx


def test_mh_gamma_zero_proposal_always_accepted():
    sampler, idx = flat_sampler()
    sampler.C_gamma = [np.zeros((idx.p1, idx.p1)) for _ in range(sampler.G)]
    sampler.adapting = False
    for g in range(sampler.G):
        alpha = sampler.mh_update_gamma(g)
        assert alpha == 1.0
    assert sampler.accept_counts["gamma"][1] == sampler.G


def test_mh_gamma_rejects_negative_rates():
    sampler, idx = flat_sampler(rate_mean=0.05)
    # enormous proposal steps: essentially every draw goes negative somewhere
    sampler.C_gamma = [1e4 * np.eye(idx.p1) for _ in range(sampler.G)]
    sampler.adapting = False
    for _ in range(40):
        for g in range(sampler.G):
            sampler.mh_update_gamma(g)
    assert (sampler.state.gamma[:, :idx.n_rates] > 0).all()
    rate = sampler.accept_counts["gamma"][1] / sampler.accept_counts["gamma"][0]
    assert rate < 0.2


def test_mh_gamma_known_target_distribution():
    """With the data term flat, gamma draws follow N(mu, Sigma) (KS check)."""
    sampler, idx = flat_sampler(G=2, sigma_scale=0.09, rate_mean=8.0)
    sampler.adapting = False
    draws = []
    for it in range(12000):
        sampler._sigma_chol = _chol_psd(sampler.state.sigma)
        sampler.mh_update_gamma(0)
        if it >= 2000 and it % 5 == 0:
            draws.append(sampler.state.gamma[0].copy())
    draws = np.asarray(draws)
    mu = sampler.state.mu
    sd = math.sqrt(0.09)
    # rates are truncated, so test a non-rate coordinate
    k = idx.n_rates
    zscores = (draws[:, k] - mu[k]) / sd
    assert scipy.stats.kstest(zscores, "norm").pvalue > 0.005


def test_eta_adaptation_converges_to_target(rng):
    design = network_only_design(G=3, n=4, n_waves=2)
    # make one coefficient constant so eta exists
    design.model.x_effects[2] = EffectDescriptor("transitive_triplets", NET_X)
    design.model.x_effects[3] = EffectDescriptor("three_cycles", NET_X)
    model = ModelSpec(design.model.x_effects, [])
    idx = ParameterIndex(model, 1, has_z=False)
    ds, _ = generate_study(
        network_only_design(G=3, n=4, n_waves=2), np.random.default_rng(0))
    prior = PriorConfig("conjugate", np.full(idx.p1, 5.0), 1.0,
                        0.1 * (idx.p1 + 3) * np.eye(idx.p1), idx.p1 + 3,
                        np.zeros(idx.p2), np.full(idx.p2, 1.0))
    init = ParamState(np.tile(prior.mu0, (3, 1)), np.zeros(idx.p2),
                      prior.mu0.copy(), 0.1 * np.eye(idx.p1))
    covs = {"gamma": [0.1 * np.eye(idx.p1)] * 3, "eta": np.eye(idx.p2),
            "shift": 0.1 * np.eye(idx.p1 - idx.n_rates + idx.p2)}
    run = RunConfig(steps=10, warmup=5, chains=1, seed=1, target_accept=0.25)
    sampler = HierSampler(ds, model, prior, run, init, covs,
                          np.random.SeedSequence(4), flatten_data=True)
    accepted = 0
    for it in range(4000):
        sampler.adapting = True
        sampler.mh_update_eta_direct()
    # acceptance over the last stretch should be near the 25% target
    a0 = sampler.accept_counts["eta_direct"].copy()
    sampler.adapting = False
    for it in range(2000):
        sampler.mh_update_eta_direct()
    a1 = sampler.accept_counts["eta_direct"] - a0
    rate = a1[1] / a1[0]
    assert 0.15 < rate < 0.40


def test_eta_joint_shift_excludes_rates():
    sampler, idx = flat_sampler(G=3)
    if idx.p1 - idx.n_rates == 0:
        pytest.skip("design has no non-rate varying coordinates")
    rates_before = sampler.state.gamma[:, :idx.n_rates].copy()
    sampler.adapting = False
    for _ in range(50):
        sampler.mh_update_eta_joint()
    assert np.array_equal(rates_before, sampler.state.gamma[:, :idx.n_rates])


def test_group_loglik_is_sum_of_period_likelihoods():
    """The cached group log likelihood factorizes over periods (joint density check)."""
    design = reference_design()
    design.G = 2
    ds, truth = generate_study(design, np.random.default_rng(3))
    idx = design.index()
    prior = default_prior(idx)
    prior.apply_rate_hyperparameters(np.full(idx.n_rates, 3.0), 0.5 * np.eye(idx.n_rates))
    init = ParamState(truth.gamma[:2].copy(), truth.eta.copy(), design.mu.copy(),
                      design.sigma.copy())
    covs = {"gamma": [0.01 * np.eye(idx.p1)] * 2, "eta": 0.01 * np.eye(idx.p2),
            "shift": 0.01 * np.eye(idx.p1 - idx.n_rates + idx.p2)}
    run = RunConfig(steps=4, warmup=2, chains=1, seed=0)
    sampler = HierSampler(ds, design.model, prior, run, init, covs,
                          np.random.SeedSequence(0))
    for g, gw in enumerate(sampler.groups):
        rates = idx.rates_spec(init.gamma[g])
        theta = dict(zip(design.model.x_effects, idx.theta(init.gamma[g], init.eta)[0]))
        theta.update(zip(design.model.z_effects, idx.theta(init.gamma[g], init.eta)[1]))
        parts = sum(
            log_p_aug(pw.to_path(), gw.waves[m], rates, theta, gw.cov)
            for m, pw in enumerate(gw.paths))
        assert gw.loglik == pytest.approx(parts, abs=1e-8)


def test_initial_rate_value_rule():
    # 40 observed tie-variable changes among 20 actors: initial rate 1.5 * 40/20 = 3
    assert initial_rate_value(40, 20) == pytest.approx(3.0)


def test_initializer_single_group_stages_coincide():
    # G = 1 with a well-identified model: both stages target the same moments
    from mlsaom.synthbench import StudyDesign
    model = ModelSpec([EffectDescriptor("outdegree", NET_X, varying=True),
                       EffectDescriptor("reciprocity", NET_X, varying=True)], [])
    design = StudyDesign(G=1, n=16, h=0, n_waves=3, model=model,
                         mu=np.array([2.5, 2.5, -1.8, 1.2]),
                         sigma=np.diag([0.05] * 4), eta=np.zeros(0),
                         x_density=0.15)
    ds, _ = generate_study(design, np.random.default_rng(5))
    init = initialize(ds, design.model, np.random.default_rng(6),
                      subphases=2, iters=25, pilot_batch=4, cov_batch=30,
                      stage2_iters=10, stage2_batch=20)
    gamma_names = design.index().gamma_names
    theta0_gamma = np.array([init.theta0[init.theta0_names.index(n)] for n in gamma_names])
    # stage-2 refinement of the single group stays within RM noise of stage 1
    assert np.all(np.abs(init.state.gamma[0] - theta0_gamma) < 1.0)


def test_mcmc_requires_positive_initial_rates():
    design = network_only_design(G=3, n=5, n_waves=2)
    ds, truth = generate_study(design, np.random.default_rng(1))
    idx = design.index()
    bad = ParamState(np.zeros((3, idx.p1)), np.zeros(0), np.zeros(idx.p1), np.eye(idx.p1))
    prior = default_prior(idx)
    run = RunConfig(steps=4, warmup=2, chains=1, seed=0)
    with pytest.raises(ValueError):
        HierSampler(ds, design.model, prior, run, bad,
                    {"gamma": [np.eye(idx.p1)] * 3, "eta": np.eye(1), "shift": np.eye(idx.p1 - idx.n_rates)},
                    np.random.SeedSequence(0))


def test_mvn_logpdf_matches_scipy(rng):
    for _ in range(10):
        p = 3
        A = rng.normal(size=(p, p))
        cov = A @ A.T + np.eye(p)
        mean = rng.normal(size=p)
        x = rng.normal(size=p)
        got = mvn_logpdf(x, mean, np.linalg.cholesky(cov))
        want = scipy.stats.multivariate_normal.logpdf(x, mean, cov)
        assert got == pytest.approx(want, abs=1e-9)
