"""File formats, preparation rules, and inclusion screens."""
import json

import numpy as np
import pytest

from mlsaom import InclusionCriteria, dichotomize, filter_groups, impute_missing
from mlsaom.dataio import (
    DataError,
    GroupData,
    PanelDataset,
    load_dataset,
    load_draws,
    write_dataset,
    write_draws,
)


def toy_dataset(G=2, n=4, h=2, waves=3, seed=0, with_missing=False) -> PanelDataset:
    rng = np.random.default_rng(seed)
    groups = []
    for g in range(G):
        xw, zw, xm, zm = [], [], [], []
        for m in range(waves):
            x = (rng.random((n, n)) < 0.4).astype(np.uint8)
            np.fill_diagonal(x, 0)
            z = (rng.random((n, h)) < 0.4).astype(np.uint8)
            mx = np.ones((n, n), dtype=bool)
            mz = np.ones((n, h), dtype=bool)
            if with_missing and m > 0:
                mx[rng.random((n, n)) < 0.15] = False
                mz[rng.random((n, h)) < 0.15] = False
                np.fill_diagonal(mx, True)
                x[~mx] = 0
                z[~mz] = 0
            xw.append(x)
            zw.append(z)
            xm.append(mx)
            zm.append(mz)
        covs = {"sex": rng.integers(1, 3, n).astype(float),
                "advice": rng.random(n) * 8 + 1}
        covs["advice"][0] = np.nan
        groups.append(GroupData(f"g{g}", n, xw, zw, xm, zm, covs, {"cohort": float(g)}))
    return PanelDataset(groups, h=h, second_mode=[f"b{k}" for k in range(h)])


def test_dataset_round_trip(tmp_path):
    ds = toy_dataset(with_missing=True)
    write_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.G == ds.G and back.h == ds.h and back.n_waves == ds.n_waves
    for a, b in zip(ds.groups, back.groups):
        assert a.gid == b.gid and a.n == b.n
        for m in range(ds.n_waves):
            assert np.array_equal(a.x_waves[m], b.x_waves[m])
            assert np.array_equal(a.x_masks[m], b.x_masks[m])
            assert np.array_equal(a.z_waves[m], b.z_waves[m])
            assert np.array_equal(a.z_masks[m], b.z_masks[m])
        for k in a.actor_covariates:
            va, vb = a.actor_covariates[k], b.actor_covariates[k]
            assert np.allclose(va, vb, equal_nan=True)
        assert a.group_covariates == b.group_covariates


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)  # no manifest
    ds = toy_dataset()
    write_dataset(ds, tmp_path / "d")
    # corrupt a wave: wrong column count
    bad = tmp_path / "d" / "g0" / "x1.csv"
    bad.write_text("0,1\n1,0\n")
    with pytest.raises(DataError) as err:
        load_dataset(tmp_path / "d")
    assert "x1.csv" in str(err.value)
    # non-binary entry
    bad.write_text("0,1,0,2\n" + "0,0,0,0\n" * 3)
    with pytest.raises(DataError) as err:
        load_dataset(tmp_path / "d")
    assert "2" in str(err.value)


def test_validate_dimension_mismatch():
    ds = toy_dataset()
    ds.groups[0].x_waves[1] = np.zeros((3, 3), dtype=np.uint8)
    with pytest.raises(DataError) as err:
        ds.validate()
    assert "g0" in str(err.value) and "wave 1" in str(err.value)


def test_covariates_for_builds_constants():
    ds = toy_dataset()
    cov = ds.covariates_for(0)
    n = ds.groups[0].n
    assert np.isfinite(cov.actor["advice"]).all()  # NaN imputed to the group mean
    assert "advice_mean" in cov.group and "cohort" in cov.group
    assert cov.ranges["advice"] > 0
    assert 0.0 < cov.similarity_mean["advice"] <= 1.0
    assert cov.zbar > 0


def test_dichotomize_rules():
    raw = np.array([
        [1, 1, 1, 1],   # never anything
        [2, 1, 1, 2],   # stealing once -> 1; fighting once -> 0
        [1, 1, 1, 3],   # fighting twice -> 1
        [5, 4, 2, 2],
    ], dtype=float)
    out = dichotomize(raw)
    assert out[0].tolist() == [0, 0, 0, 0]
    assert out[1, 0] == 1.0 and out[1, 3] == 0.0
    assert out[2, 3] == 1.0
    assert out[3].tolist() == [1, 1, 1, 0]


def test_dichotomize_monotone_and_errors(rng):
    thresholds = (2, 2, 2, 3)
    raw = rng.integers(1, 6, size=(10, 4)).astype(float)
    out = dichotomize(raw, thresholds)
    raised = np.minimum(raw + 1, 5)
    out2 = dichotomize(raised, thresholds)
    assert (out2 >= out).all()
    nan = raw.copy()
    nan[0, 0] = np.nan
    assert np.isnan(dichotomize(nan)[0, 0])
    with pytest.raises(DataError):
        dichotomize(np.full((2, 4), 6.0))
    with pytest.raises(DataError):
        dichotomize(np.ones((2, 3)))


def test_impute_missing_rules():
    ds = toy_dataset(G=1, waves=3)
    g = ds.groups[0]
    g.x_masks[0][1, 2] = False
    g.x_waves[0][1, 2] = 0
    g.x_waves[1][2, 3] = 1
    g.x_masks[2][2, 3] = False
    g.x_waves[2][2, 3] = 0
    out = impute_missing(ds)
    go = out.groups[0]
    assert go.x_waves[0][1, 2] == 0           # wave-0 missing -> 0
    assert go.x_waves[2][2, 3] == 1           # carried forward from wave 1
    assert not go.x_masks[2][2, 3]            # mask retained
    # no missing anywhere: identity
    clean = toy_dataset(G=1)
    out2 = impute_missing(clean)
    for m in range(clean.n_waves):
        assert np.array_equal(out2.groups[0].x_waves[m], clean.groups[0].x_waves[m])


def stable_group(gid, n=6, h=2, waves=3, density=0.3, seed=0):
    rng = np.random.default_rng(seed)
    x = (rng.random((n, n)) < density).astype(np.uint8)
    np.fill_diagonal(x, 0)
    z = (rng.random((n, h)) < density).astype(np.uint8)
    if x.sum() == 0:
        x[0, 1] = 1
    if z.sum() == 0:
        z[0, 0] = 1
    return GroupData(gid, n, [x.copy() for _ in range(waves)],
                     [z.copy() for _ in range(waves)],
                     [np.ones((n, n), dtype=bool)] * waves,
                     [np.ones((n, h), dtype=bool)] * waves,
                     {"advice": np.arange(n, dtype=float) + 1})


def test_filter_groups_rules():
    ok = stable_group("ok")
    low_jaccard = stable_group("lowjac", seed=1)
    # make period-1 one-mode Jaccard tiny
    x2 = low_jaccard.x_waves[1].copy()
    x2[:] = 0
    x2[3, 4] = 1
    low_jaccard.x_waves[1] = x2
    dense = stable_group("dense", seed=2)
    for m in range(3):
        dense.z_waves[m] = np.ones_like(dense.z_waves[m])
    few_advice = stable_group("fewadv", seed=3)
    few_advice.actor_covariates["advice"] = np.array([1.0, 2.0] + [np.nan] * 4)
    missing = stable_group("missing", seed=4)
    mask = missing.x_masks[0].copy()
    mask[np.unravel_index(np.arange(0, 12), mask.shape)] = False
    missing.x_masks = [mask] + missing.x_masks[1:]

    ds = PanelDataset([ok, low_jaccard, dense, few_advice, missing], h=2)
    crit = InclusionCriteria(covariate="advice", min_covariate_obs=4)
    kept, report = filter_groups(ds, crit)
    by_id = {r.gid: r for r in report.rows}
    assert by_id["ok"].included
    assert not by_id["lowjac"].included
    assert any("Jaccard" in r for r in by_id["lowjac"].reasons)
    assert not by_id["dense"].included
    assert any("density" in r for r in by_id["dense"].reasons)
    assert not by_id["fewadv"].included
    assert not by_id["missing"].included
    assert kept.G == 1
    for row in report.rows:
        assert row.included or row.reasons


def test_filter_groups_idempotent():
    ds = PanelDataset([stable_group(f"g{i}", seed=i) for i in range(4)], h=2)
    crit = InclusionCriteria(covariate=None)
    once, _ = filter_groups(ds, crit)
    twice, _ = filter_groups(once, crit)
    assert [g.gid for g in once.groups] == [g.gid for g in twice.groups]


def test_draws_round_trip(tmp_path, rng):
    cols = ["mu:a", "eta:b"]
    chains = [rng.normal(size=(50, 2)), rng.normal(size=(50, 2))]
    write_draws(tmp_path / "out", cols, chains, {"seed": 7})
    cols2, chains2, manifest = load_draws(tmp_path / "out")
    assert cols2 == cols
    assert manifest["seed"] == 7
    for a, b in zip(chains, chains2):
        assert np.allclose(a, b)  # full 17-digit round trip
        assert np.array_equal(a, b)
