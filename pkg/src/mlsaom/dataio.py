"""Dataset ingestion, preparation, and on-disk formats.

A dataset directory holds one ``dataset.json`` manifest, per-group wave
matrices as headerless CSV of 0/1/NA, per-group actor covariates as
headered CSV, and optional group-level covariates in ``groups.csv``.
Posterior draws are written as one CSV per chain plus a JSON run manifest.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .effects import CovariateSet
from .netstate import JointState, jaccard_stability


class DataError(Exception):
    """Malformed input data or configuration (CLI exit code 2)."""


@dataclass
class GroupData:
    gid: str
    n: int
    x_waves: list[np.ndarray]
    z_waves: list[np.ndarray]
    x_masks: list[np.ndarray]  # True = observed
    z_masks: list[np.ndarray]
    actor_covariates: dict[str, np.ndarray] = field(default_factory=dict)
    group_covariates: dict[str, float] = field(default_factory=dict)

    @property
    def n_waves(self) -> int:
        return len(self.x_waves)

    def wave_state(self, m: int, h: int) -> JointState:
        return JointState(self.n, h, self.x_waves[m], self.z_waves[m])


@dataclass
class PanelDataset:
    groups: list[GroupData]
    h: int = 0
    second_mode: list[str] = field(default_factory=list)

    @property
    def G(self) -> int:
        return len(self.groups)

    @property
    def n_waves(self) -> int:
        return self.groups[0].n_waves if self.groups else 0

    @property
    def n_periods(self) -> int:
        return max(self.n_waves - 1, 0)

    def actor_covariate_names(self) -> list[str]:
        names: list[str] = []
        for g in self.groups:
            for k in g.actor_covariates:
                if k not in names:
                    names.append(k)
        return names

    def group_covariate_names(self) -> list[str]:
        names: list[str] = []
        for g in self.groups:
            for k in g.group_covariates:
                if k not in names:
                    names.append(k)
        for k in self.actor_covariate_names():
            names.append(f"{k}_mean")
        return names

    def validate(self) -> None:
        if not self.groups:
            raise DataError("dataset has no groups")
        waves = self.groups[0].n_waves
        for g in self.groups:
            if g.n_waves != waves:
                raise DataError(f"group {g.gid}: {g.n_waves} waves, expected {waves}")
            if g.n_waves < 2:
                raise DataError(f"group {g.gid}: needs at least two waves")
            for m, (xw, zw) in enumerate(zip(g.x_waves, g.z_waves)):
                if xw.shape != (g.n, g.n):
                    raise DataError(f"group {g.gid} wave {m}: one-mode matrix is {xw.shape}, expected {(g.n, g.n)}")
                if zw.shape != (g.n, self.h):
                    raise DataError(f"group {g.gid} wave {m}: two-mode matrix is {zw.shape}, expected {(g.n, self.h)}")
                for name, mat, mask in (("one-mode", xw, g.x_masks[m]), ("two-mode", zw, g.z_masks[m])):
                    if not np.isin(mat[mask], (0, 1)).all():
                        raise DataError(f"group {g.gid} wave {m}: non-binary observed {name} entry")
            for name, v in g.actor_covariates.items():
                if len(v) != g.n:
                    raise DataError(f"group {g.gid}: covariate {name!r} has {len(v)} values for {g.n} actors")

    def covariate_ranges(self) -> dict[str, float]:
        """Dataset-wide ranges, shared by all groups for similarity scaling."""
        ranges: dict[str, float] = {}
        for name in self.actor_covariate_names():
            lo, hi = math.inf, -math.inf
            for g in self.groups:
                v = g.actor_covariates.get(name)
                if v is None:
                    continue
                v = v[np.isfinite(v)]
                if v.size:
                    lo = min(lo, float(v.min()))
                    hi = max(hi, float(v.max()))
            if hi > lo:
                ranges[name] = hi - lo
        return ranges

    def covariates_for(self, g: int) -> CovariateSet:
        """Frozen covariate bundle for one group (imputed to the group mean)."""
        grp = self.groups[g]
        ranges = self.covariate_ranges()
        actor: dict[str, np.ndarray] = {}
        sim_mean: dict[str, float] = {}
        for name, raw in grp.actor_covariates.items():
            v = np.asarray(raw, dtype=float).copy()
            obs = np.isfinite(v)
            fill = float(v[obs].mean()) if obs.any() else 0.0
            v[~obs] = fill
            actor[name] = v
            if name in ranges:
                sim_mean[name] = CovariateSet.centering_constants(v, ranges[name])
        group = dict(grp.group_covariates)
        for name, v in actor.items():
            group.setdefault(f"{name}_mean", float(v.mean()))
        zbar = 0.0
        if self.h:
            degs = [zw.sum(axis=1) for zw in grp.z_waves]
            zbar = float(np.mean(np.concatenate(degs)))
        return CovariateSet(actor=actor, group=group, ranges=ranges,
                            similarity_mean=sim_mean, zbar=zbar)


# ---------------------------------------------------------------------------
# Matrix CSV round trip

def _read_matrix(path: Path, shape: tuple[int, int]):
    values = np.zeros(shape, dtype=np.uint8)
    mask = np.ones(shape, dtype=bool)
    try:
        rows = [line for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(rows) != shape[0]:
        raise DataError(f"{path}: {len(rows)} rows, expected {shape[0]}")
    for i, line in enumerate(rows):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != shape[1]:
            raise DataError(f"{path}:{i + 1}: {len(cells)} columns, expected {shape[1]}")
        for j, c in enumerate(cells):
            if c.upper() in ("NA", ""):
                mask[i, j] = False
            elif c in ("0", "1"):
                values[i, j] = int(c)
            else:
                raise DataError(f"{path}:{i + 1}: entry {c!r} is not 0/1/NA")
    return values, mask


def _write_matrix(path: Path, values: np.ndarray, mask: np.ndarray) -> None:
    lines = []
    for i in range(values.shape[0]):
        cells = [str(int(values[i, j])) if mask[i, j] else "NA" for j in range(values.shape[1])]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def load_dataset(data_dir) -> PanelDataset:
    """Read a dataset directory; missing entries become mask bits."""
    root = Path(data_dir)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: {exc}") from exc
    h = int(manifest.get("h", 0))
    second_mode = list(manifest.get("second_mode", [f"item{k}" for k in range(h)]))
    group_cov: dict[str, dict[str, float]] = {}
    gc_path = root / "groups.csv"
    if gc_path.exists():
        with gc_path.open() as fh:
            for row in csv.DictReader(fh):
                gid = row.pop("id")
                group_cov[gid] = {k: float(v) for k, v in row.items() if v != ""}
    groups = []
    for spec in manifest.get("groups", []):
        gid = str(spec["id"])
        n = int(spec["n"])
        waves = int(spec["waves"])
        gdir = root / gid
        xw, zw, xm, zm = [], [], [], []
        for m in range(waves):
            x, mx = _read_matrix(gdir / f"x{m}.csv", (n, n))
            np.fill_diagonal(x, 0)
            np.fill_diagonal(mx, True)
            xw.append(x)
            xm.append(mx)
            if h:
                z, mz = _read_matrix(gdir / f"z{m}.csv", (n, h))
            else:
                z, mz = np.zeros((n, 0), dtype=np.uint8), np.ones((n, 0), dtype=bool)
            zw.append(z)
            zm.append(mz)
        actor_cov: dict[str, np.ndarray] = {}
        acov_path = gdir / "actors.csv"
        if acov_path.exists():
            with acov_path.open() as fh:
                reader = csv.DictReader(fh)
                cols = [c for c in (reader.fieldnames or []) if c != "id"]
                rows = list(reader)
            if len(rows) != n:
                raise DataError(f"{acov_path}: {len(rows)} actors, expected {n}")
            for c in cols:
                vals = [float("nan") if r[c] in ("", "NA") else float(r[c]) for r in rows]
                actor_cov[c] = np.asarray(vals)
        groups.append(GroupData(gid, n, xw, zw, xm, zm, actor_cov, group_cov.get(gid, {})))
    ds = PanelDataset(groups, h=h, second_mode=second_mode)
    ds.validate()
    return ds


def write_dataset(ds: PanelDataset, data_dir) -> None:
    root = Path(data_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "h": ds.h,
        "second_mode": ds.second_mode,
        "groups": [{"id": g.gid, "n": g.n, "waves": g.n_waves} for g in ds.groups],
    }
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1) + "\n")
    any_group_cov = any(g.group_covariates for g in ds.groups)
    if any_group_cov:
        names = sorted({k for g in ds.groups for k in g.group_covariates})
        with (root / "groups.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + names)
            for g in ds.groups:
                w.writerow([g.gid] + [g.group_covariates.get(k, "") for k in names])
    for g in ds.groups:
        gdir = root / g.gid
        gdir.mkdir(exist_ok=True)
        for m in range(g.n_waves):
            _write_matrix(gdir / f"x{m}.csv", g.x_waves[m], g.x_masks[m])
            if ds.h:
                _write_matrix(gdir / f"z{m}.csv", g.z_waves[m], g.z_masks[m])
        if g.actor_covariates:
            names = sorted(g.actor_covariates)
            with (gdir / "actors.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["id"] + names)
                for i in range(g.n):
                    row = [str(i)]
                    for k in names:
                        v = g.actor_covariates[k][i]
                        row.append("NA" if not np.isfinite(v) else format(float(v), ".10g"))
                    w.writerow(row)


# ---------------------------------------------------------------------------
# Preparation

DICHOTOMIZE_DEFAULT = (2, 2, 2, 3)  # >= once except the last column (>= twice)


def dichotomize(raw, thresholds=DICHOTOMIZE_DEFAULT) -> np.ndarray:
    """Map ordinal frequency categories (1..5, 1 = never) to binary ties.

    NaN entries pass through as NaN (missing).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != len(thresholds):
        raise DataError(f"expected {len(thresholds)} columns, got {raw.shape}")
    finite = raw[np.isfinite(raw)]
    if finite.size and ((finite < 1) | (finite > 5)).any():
        raise DataError("category outside 1..5")
    out = np.where(np.isfinite(raw), (raw >= np.asarray(thresholds)).astype(float), np.nan)
    return out


def impute_missing(ds: PanelDataset) -> PanelDataset:
    """Last-observation-carried-forward fill; wave 0 missing becomes 0.

    Masks are retained so that observed-statistic targets can skip imputed
    entries while the likelihood treats the filled waves as data.
    """
    groups = []
    for g in ds.groups:
        xw = [w.copy() for w in g.x_waves]
        zw = [w.copy() for w in g.z_waves]
        for m in range(g.n_waves):
            for waves, masks in ((xw, g.x_masks), (zw, g.z_masks)):
                miss = ~masks[m]
                if not miss.any():
                    continue
                if m == 0:
                    waves[0][miss] = 0
                else:
                    waves[m][miss] = waves[m - 1][miss]
        groups.append(replace(g, x_waves=xw, z_waves=zw))
    return PanelDataset(groups, h=ds.h, second_mode=ds.second_mode)


@dataclass
class InclusionCriteria:
    max_missing: float = 0.20          # first two waves, both networks
    max_missing_z_first: float = 0.10  # first wave, two-mode network
    min_jaccard: float = 0.2           # every network, every period
    covariate: str | None = "advice"
    min_covariate_obs: int = 10
    max_z_density: float = 0.50        # outlier rule: exceeded at every wave


@dataclass
class GroupInclusion:
    gid: str
    included: bool
    reasons: list[str]
    missing_x: list[float]
    missing_z: list[float]
    jaccard_x: list[float]
    jaccard_z: list[float]
    z_density: list[float]
    covariate_obs: int | None


@dataclass
class InclusionReport:
    rows: list[GroupInclusion]

    def included_ids(self) -> list[str]:
        return [r.gid for r in self.rows if r.included]


def filter_groups(ds: PanelDataset, criteria: InclusionCriteria | None = None):
    """Apply the inclusion screens; returns the kept dataset and a full report."""
    crit = criteria or InclusionCriteria()
    imputed = impute_missing(ds)
    rows = []
    kept = []
    for g_raw, g_imp in zip(ds.groups, imputed.groups):
        reasons = []
        miss_x = [1.0 - m.mean() for m in g_raw.x_masks]
        miss_z = [1.0 - m.mean() if m.size else 0.0 for m in g_raw.z_masks]
        for m in range(min(2, g_raw.n_waves)):
            if miss_x[m] >= crit.max_missing:
                reasons.append(f"one-mode missing {miss_x[m]:.0%} at wave {m}")
            if ds.h and miss_z[m] >= crit.max_missing:
                reasons.append(f"two-mode missing {miss_z[m]:.0%} at wave {m}")
        if ds.h and miss_z[0] >= crit.max_missing_z_first:
            reasons.append(f"two-mode missing {miss_z[0]:.0%} at first wave")
        jx, jz = [], []
        for m in range(g_raw.n_waves - 1):
            try:
                jx.append(jaccard_stability(g_imp.x_waves[m], g_imp.x_waves[m + 1]))
            except ValueError:
                jx.append(0.0)
            if ds.h:
                try:
                    jz.append(jaccard_stability(g_imp.z_waves[m], g_imp.z_waves[m + 1]))
                except ValueError:
                    jz.append(0.0)
        for m, j in enumerate(jx):
            if j <= crit.min_jaccard:
                reasons.append(f"one-mode Jaccard {j:.2f} in period {m}")
        for m, j in enumerate(jz):
            if j <= crit.min_jaccard:
                reasons.append(f"two-mode Jaccard {j:.2f} in period {m}")
        zdens = [float(w.mean()) if w.size else 0.0 for w in g_imp.z_waves]
        if ds.h and all(d > crit.max_z_density for d in zdens):
            reasons.append("two-mode density outlier (> 0.50 at every wave)")
        cov_obs = None
        if crit.covariate is not None and crit.covariate in g_raw.actor_covariates:
            cov_obs = int(np.isfinite(g_raw.actor_covariates[crit.covariate]).sum())
            if cov_obs < crit.min_covariate_obs:
                reasons.append(f"only {cov_obs} actors with observed {crit.covariate}")
        included = not reasons
        rows.append(GroupInclusion(g_raw.gid, included, reasons, miss_x, miss_z,
                                   jx, jz, zdens, cov_obs))
        if included:
            kept.append(g_raw)
    report = InclusionReport(rows)
    return PanelDataset(kept, h=ds.h, second_mode=ds.second_mode), report


# ---------------------------------------------------------------------------
# Config and draw files

def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: {exc}") from exc
    for section in ("model",):
        if section not in cfg:
            raise DataError(f"config lacks required section {section!r}")
    return cfg


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_draws(out_dir, columns: list[str], chains: list[np.ndarray], manifest: dict) -> None:
    """One CSV per chain (rows = retained draws) plus a JSON manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for c, draws in enumerate(chains):
        path = root / f"chain_{c}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in draws:
                w.writerow([format_float(v) for v in row])
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_draws(out_dir):
    root = Path(out_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    chains = []
    columns = None
    c = 0
    while (root / f"chain_{c}.csv").exists():
        with (root / f"chain_{c}.csv").open() as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.asarray([[float(v) for v in row] for row in reader])
        if columns is None:
            columns = header
        elif columns != header:
            raise DataError(f"chain_{c}.csv has mismatched columns")
        chains.append(data)
        c += 1
    if not chains:
        raise DataError(f"no chain files in {root}")
    return columns, chains, manifest
