"""Command-line interface.

Subcommands: describe, filter, simulate, init, fit, diagnose, prior-sweep.
All estimation commands read one JSON config document with ``model`` /
``prior`` / ``run`` sections plus a dataset directory.  Report paths write
figures next to the delimited outputs.  Exit codes: 0 ok, 1 usage,
2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, plots
from .dataio import (
    DataError,
    InclusionCriteria,
    config_hash,
    impute_missing,
    filter_groups,
    load_config,
    load_dataset,
    load_draws,
    write_dataset,
    write_draws,
)
from .effects import EffectDescriptor, ModelSpec
from .hierbayes import (
    NumericalError,
    ParameterIndex,
    RunConfig,
    default_prior,
    initialize,
    mcmc_run,
)
from .netstate import NET_X, NET_Z
from .synthbench import generate_study, load_design

ENV_PREFIX = "MLSAOM_"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _env_default(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper(), fallback)


def build_parser() -> _Parser:
    p = _Parser(prog="mlsaom", description=__doc__)
    p.add_argument("--version", action="version", version=f"mlsaom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out=True, config=False, run_flags=False):
        if data:
            sp.add_argument("--data-dir", default=_env_default("data_dir"), help="dataset directory")
        if out:
            sp.add_argument("--out-dir", default=_env_default("out_dir"), help="output directory")
        if config:
            sp.add_argument("--config", default=_env_default("config"), help="JSON config file")
        if run_flags:
            sp.add_argument("--seed", type=int, default=_env_default("seed"))
            sp.add_argument("--chains", type=int, default=_env_default("chains"))
            sp.add_argument("--steps", type=int, default=_env_default("steps"))
            sp.add_argument("--warmup", type=int, default=_env_default("warmup"))
            sp.add_argument("--threads", type=int, default=_env_default("threads"))

    sp = sub.add_parser("describe", help="descriptive tables for a dataset")
    common(sp)

    sp = sub.add_parser("filter", help="apply the group-inclusion screens")
    common(sp)
    sp.add_argument("--config", default=_env_default("config"),
                    help="optional config with a 'filter' section")

    sp = sub.add_parser("simulate", help="draw a synthetic multilevel panel")
    common(sp, data=False)
    sp.add_argument("--design", required=True, help="study design JSON")
    sp.add_argument("--seed", type=int, default=_env_default("seed", 0))

    sp = sub.add_parser("init", help="run the two-stage moment initializer only")
    common(sp, config=True)
    sp.add_argument("--seed", type=int, default=_env_default("seed"))

    sp = sub.add_parser("fit", help="full Bayesian estimation")
    common(sp, config=True, run_flags=True)

    sp = sub.add_parser("diagnose", help="convergence and posterior summaries from stored draws")
    common(sp, data=False)
    sp.add_argument("--draws-dir", required=True, help="directory written by fit")
    sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("prior-sweep", help="refit across a grid of prior scales")
    common(sp, config=True, run_flags=True)
    sp.add_argument("--sigma0-grid", default=None,
                    help="comma-separated sigma0^2 values (overrides config)")
    return p


# ---------------------------------------------------------------------------
# Config assembly

def model_from_config(cfg: dict) -> ModelSpec:
    mc = cfg.get("model")
    if not isinstance(mc, dict):
        raise DataError("config: missing model section")

    def build(entries, net):
        out = []
        for e in entries:
            try:
                out.append(EffectDescriptor(e["name"], net, covariate=e.get("covariate"),
                                            varying=bool(e.get("varying", False))))
            except (ValueError, KeyError) as exc:
                raise DataError(f"config: bad effect entry {e}: {exc}") from exc
        return out

    return ModelSpec(build(mc.get("x_effects", []), NET_X), build(mc.get("z_effects", []), NET_Z))


def prior_from_config(cfg: dict, index: ParameterIndex, group_covariates):
    pc = cfg.get("prior", {})
    prior = default_prior(index,
                          group_covariates=group_covariates,
                          mode=pc.get("mode", "conjugate"),
                          sigma0_sq=pc.get("sigma0_sq"),
                          kappa0=pc.get("kappa0", 0.01),
                          nu0=pc.get("nu0"),
                          zero_means=bool(pc.get("zero_means", False)))
    for key, val in pc.get("mu0", {}).items():
        if key not in index.gamma_names:
            raise DataError(f"config: prior.mu0 references unknown coefficient {key!r}")
        prior.mu0[index.gamma_names.index(key)] = float(val)
    for key, mv in pc.get("eta_normal", {}).items():
        if key not in index.eta_names:
            raise DataError(f"config: prior.eta_normal references unknown coefficient {key!r}")
        k = index.eta_names.index(key)
        prior.eta_mean[k] = float(mv[0])
        prior.eta_var[k] = float(mv[1])
    return prior


def run_from_config(cfg: dict, args) -> RunConfig:
    rc = dict(cfg.get("run", {}))
    for field in ("seed", "chains", "steps", "warmup", "threads"):
        v = getattr(args, field, None)
        if v is not None:
            rc[field] = int(v)
    known = {f for f in RunConfig.__dataclass_fields__}
    bad = set(rc) - known
    if bad:
        raise DataError(f"config: unknown run options {sorted(bad)}")
    return RunConfig(**rc)


def criteria_from_config(cfg: dict) -> InclusionCriteria:
    fc = dict(cfg.get("filter", {}))
    known = {f for f in InclusionCriteria.__dataclass_fields__}
    bad = set(fc) - known
    if bad:
        raise DataError(f"config: unknown filter options {sorted(bad)}")
    return InclusionCriteria(**fc)


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def _need(args, attr):
    v = getattr(args, attr, None)
    if v is None:
        raise DataError(f"--{attr.replace('_', '-')} is required for this command")
    return v


# ---------------------------------------------------------------------------
# Subcommand implementations

def cmd_describe(args) -> int:
    ds = load_dataset(_need(args, "data_dir"))
    out = Path(_need(args, "out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    tables = diagnostics.describe(ds)
    _write_csv(out / "describe_networks.csv", tables["networks"])
    _write_csv(out / "describe_covariates.csv", tables["covariates"])
    (out / "describe.json").write_text(json.dumps(tables, indent=1) + "\n")
    plots.describe_figure(tables, out / "describe_networks.png")
    print(f"wrote descriptives for {ds.G} groups to {out}")
    return 0


def cmd_filter(args) -> int:
    ds = load_dataset(_need(args, "data_dir"))
    crit = InclusionCriteria()
    if args.config:
        crit = criteria_from_config(load_config(args.config))
    kept, report = filter_groups(ds, crit)
    out = Path(_need(args, "out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    rows = [{
        "group": r.gid,
        "included": int(r.included),
        "reasons": "; ".join(r.reasons),
        "missing_x_w0": round(r.missing_x[0], 4),
        "min_jaccard_x": round(min(r.jaccard_x), 4) if r.jaccard_x else "",
        "min_jaccard_z": round(min(r.jaccard_z), 4) if r.jaccard_z else "",
        "covariate_obs": r.covariate_obs if r.covariate_obs is not None else "",
    } for r in report.rows]
    _write_csv(out / "inclusion.csv", rows)
    write_dataset(kept, out / "dataset")
    print(f"kept {kept.G}/{ds.G} groups; filtered dataset in {out / 'dataset'}")
    return 0


def cmd_simulate(args) -> int:
    design = load_design(args.design)
    rng = np.random.default_rng(int(args.seed or 0))
    ds, truth = generate_study(design, rng)
    out = Path(_need(args, "out_dir"))
    write_dataset(ds, out / "dataset")
    (out / "truth.json").write_text(json.dumps(truth.to_json(), indent=1) + "\n")
    print(f"simulated {ds.G} groups x {ds.n_waves} waves into {out / 'dataset'}")
    return 0


def _prepare(args, cfg):
    ds = impute_missing(load_dataset(_need(args, "data_dir")))
    model = model_from_config(cfg)
    model.validate_against(ds.h, ds.actor_covariate_names(), ds.group_covariate_names())
    index = ParameterIndex(model, ds.n_periods, has_z=ds.h > 0 and model.has_z)
    return ds, model, index


def cmd_init(args) -> int:
    cfg = load_config(_need(args, "config"))
    ds, model, index = _prepare(args, cfg)
    seed = int(args.seed if args.seed is not None else cfg.get("run", {}).get("seed", 0))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(999,)))
    init = initialize(ds, model, rng)
    out = Path(_need(args, "out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "theta0": dict(zip(init.theta0_names, init.theta0.tolist())),
        "gamma": init.state.gamma.tolist(),
        "eta": dict(zip(index.eta_names, init.state.eta.tolist())),
        "mu": dict(zip(index.gamma_names, init.state.mu.tolist())),
        "sigma": init.state.sigma.tolist(),
        "rate_prior_mean": init.rate_mean.tolist(),
        "rate_prior_cov": init.rate_cov.tolist(),
        "fallback": init.fallback,
    }
    (out / "init.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"initializer written to {out / 'init.json'}")
    return 0


def _fit_once(ds, model, index, cfg, run: RunConfig, out_dir: Path) -> None:
    prior = prior_from_config(cfg, index, ds.group_covariate_names())
    rng = np.random.default_rng(np.random.SeedSequence(entropy=run.seed, spawn_key=(999,)))
    init = initialize(ds, model, rng)
    chains = mcmc_run(ds, model, prior, run, init=init)
    columns = chains[0].columns
    manifest = {
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": run.seed,
        "chains": run.chains,
        "steps": run.steps,
        "warmup": run.warmup,
        "thin": run.thin,
        "groups": [g.gid for g in ds.groups],
        "gamma_names": index.gamma_names,
        "eta_names": index.eta_names,
        "columns": columns,
        "acceptance": [c.acceptance for c in chains],
        "initializer_fallback": init.fallback,
        "rate_prior_mean": init.rate_mean.tolist(),
        "missing_data_policy": "last-observation-carried-forward; wave-0 missing set to 0",
    }
    write_draws(out_dir, columns, [c.matrix() for c in chains], manifest)


def cmd_fit(args) -> int:
    cfg = load_config(_need(args, "config"))
    ds, model, index = _prepare(args, cfg)
    run = run_from_config(cfg, args)
    out = Path(_need(args, "out_dir"))
    _fit_once(ds, model, index, cfg, run, out)
    print(f"fit complete: {run.chains} chains x {run.steps} steps -> {out}")
    summary = _diagnose_dir(out, figures=False)
    bad = [k for k, v in summary.items() if np.isfinite(v["rhat"]) and v["rhat"] > 1.05]
    if bad:
        print(f"warning: R-hat above 1.05 for {len(bad)} global parameters "
              f"(worst: {max(bad, key=lambda k: summary[k]['rhat'])})")
    return 0


def _diagnose_dir(draws_dir: Path, figures: bool) -> dict:
    columns, chains, manifest = load_draws(draws_dir)
    summary = diagnostics.global_summary_table(columns, chains)
    rows = [{"parameter": k, **{kk: vv for kk, vv in v.items()}} for k, v in summary.items()]
    _write_csv(draws_dir / "summary.csv", rows)
    bet = diagnostics.between_sd_table(columns, chains)
    _write_csv(draws_dir / "between_sd.csv",
               [{"parameter": k, "between_sd": v} for k, v in bet.items()])
    grp = diagnostics.group_effect_table(columns, chains)
    _write_csv(draws_dir / "group_effects.csv",
               [{"parameter": k, **v} for k, v in grp.items()])
    (draws_dir / "summary.json").write_text(json.dumps(
        {"global": summary, "between_sd": bet}, indent=1) + "\n")
    if figures:
        mu_cols = [c for c in columns if c.startswith("mu:")][:4]
        eta_cols = [c for c in columns if c.startswith("eta:")][:2]
        plots.posterior_density_figure(columns, chains, mu_cols + eta_cols,
                                       draws_dir / "posterior_densities.png")
        for name in manifest.get("gamma_names", []):
            if not name.startswith("rate:"):
                plots.group_boxplot_figure(columns, chains, name,
                                           draws_dir / f"group_boxplot_{name.replace(':', '_')}.png")
    return summary


def cmd_diagnose(args) -> int:
    draws_dir = Path(args.draws_dir)
    summary = _diagnose_dir(draws_dir, figures=not args.no_figures)
    worst = max((v["rhat"] for v in summary.values() if np.isfinite(v["rhat"])), default=float("nan"))
    print(f"summaries for {len(summary)} global parameters written to {draws_dir}")
    print(f"worst global R-hat: {worst:.4f}")
    return 0


def cmd_prior_sweep(args) -> int:
    cfg = load_config(_need(args, "config"))
    ds, model, index = _prepare(args, cfg)
    run = run_from_config(cfg, args)
    if args.sigma0_grid:
        grid = [float(v) for v in args.sigma0_grid.split(",")]
    else:
        grid = [float(v) for v in cfg.get("sweep", {}).get("sigma0_sq", [])]
    if len(grid) < 1:
        raise DataError("prior-sweep needs a sigma0_sq grid (config sweep.sigma0_sq or --sigma0-grid)")
    out = Path(_need(args, "out_dir"))
    fits = {}
    for s0 in grid:
        sub_cfg = json.loads(json.dumps(cfg))
        sub_cfg.setdefault("prior", {})["sigma0_sq"] = s0
        fit_dir = out / f"sigma0_{s0:g}"
        _fit_once(ds, model, index, sub_cfg, run, fit_dir)
        columns, chains, _ = load_draws(fit_dir)
        fits[s0] = (columns, chains)
        print(f"sigma0^2 = {s0:g} done")
    rows = diagnostics.prior_sweep_summary(fits, np.random.default_rng(run.seed))
    _write_csv(out / "sweep.csv", rows)
    plots.sweep_interval_figure(rows, out / "sweep_intervals.png")
    print(f"sweep table and figure written to {out}")
    return 0


COMMANDS = {
    "describe": cmd_describe,
    "filter": cmd_filter,
    "simulate": cmd_simulate,
    "init": cmd_init,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "prior-sweep": cmd_prior_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
