"""Synthetic-study generation and recovery scoring."""
import numpy as np
import pytest

from mlsaom import StudyDesign, generate_study, network_only_design, reference_design, score_recovery
from mlsaom.synthbench import design_from_json, draw_group_coefficients, load_design, save_design


def test_reference_design_shape():
    d = reference_design()
    assert (d.G, d.n, d.h, d.n_waves) == (30, 15, 4, 3)
    idx = d.index()
    assert idx.n_rates == 4
    assert idx.gamma_names[4:] == ["X:outdegree", "X:reciprocity"]
    assert len(d.eta) == idx.p2 == 10


def test_design_validation():
    d = reference_design()
    with pytest.raises(ValueError):
        StudyDesign(G=d.G, n=d.n, h=d.h, n_waves=d.n_waves, model=d.model,
                    mu=d.mu[:-1], sigma=d.sigma, eta=d.eta)
    bad_mu = d.mu.copy()
    bad_mu[0] = -1.0  # negative rate mean
    with pytest.raises(ValueError):
        StudyDesign(G=d.G, n=d.n, h=d.h, n_waves=d.n_waves, model=d.model,
                    mu=bad_mu, sigma=d.sigma, eta=d.eta)


def test_design_json_round_trip(tmp_path):
    d = reference_design()
    save_design(d, tmp_path / "d.json")
    back = load_design(tmp_path / "d.json")
    assert back.G == d.G and back.n == d.n and back.h == d.h
    assert np.allclose(back.mu, d.mu)
    assert np.allclose(back.sigma, d.sigma)
    assert np.allclose(back.eta, d.eta)
    assert [e.key for e in back.model.x_effects] == [e.key for e in d.model.x_effects]


def test_generate_study_first_wave_is_initial(rng):
    d = network_only_design(G=3, n=6, n_waves=3)
    ds, truth = generate_study(d, rng)
    assert ds.G == 3 and ds.n_waves == 3
    for g in ds.groups:
        assert g.x_waves[0].shape == (6, 6)
        assert all(m.all() for m in g.x_masks)
    assert truth.gamma.shape == (3, d.index().p1)
    assert (truth.gamma[:, :d.index().n_rates] > 0).all()


def test_gamma_concentrates_with_tiny_variance(rng):
    d = network_only_design(G=20, n=5, n_waves=2)
    d.sigma = np.eye(d.index().p1) * 1e-8
    g = draw_group_coefficients(d, rng)
    assert np.allclose(g, d.mu, atol=1e-3)


def test_gamma_mean_matches_mu(rng):
    d = network_only_design(G=500, n=5, n_waves=2)
    g = draw_group_coefficients(d, rng)
    se = np.sqrt(np.diag(d.sigma) / 500)
    assert np.all(np.abs(g.mean(0) - d.mu) < 3.5 * se)


def test_pathological_truncation_raises(rng):
    d = network_only_design(G=30, n=5, n_waves=2)
    mu = d.mu.copy()
    mu[0] = 0.05  # rate barely positive
    d2 = StudyDesign(G=30, n=5, h=0, n_waves=2, model=d.model, mu=mu,
                     sigma=np.diag([4.0] + [0.01] * (d.index().p1 - 1)), eta=d.eta)
    with pytest.raises(ValueError):
        draw_group_coefficients(d2, rng)


def fake_summary(names_mu, names_eta, mu, eta, sd=0.1, rhat=1.01, shift=0.0):
    out = {}
    for names, vals in ((names_mu, mu), (names_eta, eta)):
        for n, v in zip(names, vals):
            out[n] = {"mean": v + shift, "sd": sd, "q025": v + shift - 2 * sd,
                      "q975": v + shift + 2 * sd, "rhat": rhat}
    return out


def test_score_recovery_perfect_case():
    d = network_only_design(G=4, n=5, n_waves=2)
    ds, truth = generate_study(d, np.random.default_rng(0))
    names_mu = [f"mu:{n}" for n in truth.gamma_names]
    names_eta = [f"eta:{n}" for n in truth.eta_names]
    summ = fake_summary(names_mu, names_eta, truth.mu, truth.eta)
    rep = score_recovery([summ, summ], truth)
    assert rep.converged == [True, True]
    assert all(v == 1.0 for v in rep.coverage.values())
    assert all(abs(v) < 1e-12 for v in rep.bias.values())


def test_score_recovery_flags_unconverged():
    d = network_only_design(G=4, n=5, n_waves=2)
    ds, truth = generate_study(d, np.random.default_rng(0))
    names_mu = [f"mu:{n}" for n in truth.gamma_names]
    names_eta = [f"eta:{n}" for n in truth.eta_names]
    good = fake_summary(names_mu, names_eta, truth.mu, truth.eta)
    bad = fake_summary(names_mu, names_eta, truth.mu, truth.eta, rhat=1.5)
    off = fake_summary(names_mu, names_eta, truth.mu, truth.eta, shift=1.0)
    rep = score_recovery([good, bad, off], truth)
    assert rep.converged == [True, False, True]
    # the shifted replication misses every interval
    assert all(v == pytest.approx(0.5) for v in rep.coverage.values())
