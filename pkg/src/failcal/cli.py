"""Command-line drivers.

    failcal generate-toy --seed 1 --out toy/
    failcal fit-classifier --config toy/config.json --out runs/classifier
    failcal fit-calibration --config toy/config.json --out runs/calibration
    failcal fit-coupled --config toy/config.json --out runs/coupled
    failcal b-matrix --config toy/config.json --calibration runs/calibration/chain.csv \\
        --classifier runs/classifier/chain.csv --out runs/bmatrix
    failcal summarize runs/calibration runs/coupled runs/bmatrix --out runs/report

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio
from .config import SCHEMA_HELP, AnalysisConfig, ConfigError
from .coupled import (
    AdmissibilityConfig,
    ChainAborted,
    CoupledSampler,
    admissibility_summary,
    build_b_matrix,
    density_table,
    make_admissibility,
    pi_hat,
    run_chain,
)
from .kernels import FactorizationError
from .koh import CalibrationSampler, EtaDeltaParams, Kernels
from .latent import LatentSampler, LatentState, state_from_row
from .mcmc import CALIBRATION, GATE, LATENT, XTILDE, AdaptiveProposal, Chain, stream, summarize, to_unit
from .toy import ToySpec, generate_toy

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class CLIError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """A chain aborted; its partial archive and checkpoint are on disk."""


# -- configuration plumbing ------------------------------------------------------


def _config(args, mode: str) -> AnalysisConfig:
    cfg = AnalysisConfig.load(args.config) if args.config else AnalysisConfig()
    d = cfg.to_dict()
    d["mode"] = mode
    overrides = {
        "seed": args.seed,
        "chains": args.chains,
        "iterations": args.iterations,
        "burnin": args.burnin,
        "thin": args.thin,
        "slice_mode": args.mode,
        "p_tol": args.ptol,
        "workers": args.workers,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.xtilde_size is not None:
        d["xtilde"]["size"] = args.xtilde_size
    if args.warm_start:
        d["warm_start"] = list(d["warm_start"]) + [str(Path(p)) for p in args.warm_start]
    return AnalysisConfig.from_dict(d)


def _load(cfg: AnalysisConfig, require_failures: bool):
    dc = cfg.data
    if not (dc.dir or dc.simulator):
        raise ConfigError("config has no data location (data.dir or data.field/simulator/failures)")
    return dataio.load_dataset(
        dc.dir,
        field=dc.field,
        simulator=dc.simulator,
        failures=dc.failures,
        x_ranges=cfg.x_ranges,
        t_ranges=cfg.t_ranges,
        require_failures=require_failures,
    )


def _hash(cfg: AnalysisConfig) -> str:
    # the worker count never changes results, so it stays out of the hash
    d = cfg.to_dict()
    d.pop("workers")
    return dataio.config_hash(d)


def _kernels(cfg) -> Kernels:
    return Kernels(cfg.kernels.eta, cfg.kernels.delta)


def _admissibility(cfg: AnalysisConfig, dx: int) -> AdmissibilityConfig:
    return make_admissibility(
        cfg.slice_mode, dx, cfg.xtilde.size, cfg.xtilde.kind, cfg.p_tol, stream(cfg.seed, XTILDE)
    )


def _warm(cfg: AnalysisConfig, kind: str, k: int) -> dict | None:
    """The ``k``-th (cyclically) warm-start state of ``kind`` among the configured files."""
    found = []
    for p in cfg.warm_start:
        s = dataio.load_json(p)
        s = s.get("state", s)
        if s.get("kind") == kind:
            found.append(s)
        elif s.get("kind") == "coupled" and kind in s:
            found.append(s[kind])
    return found[k % len(found)] if found else None


def _calibration_kwargs(state: dict | None, dx: int, dt: int) -> dict:
    if state is None:
        return {}
    return {
        "theta0": state["theta"],
        "params": EtaDeltaParams.from_dict(state["params"], dx, dt),
        "hyper_proposal": AdaptiveProposal.from_dict(state["hyper_proposal"]),
        "theta_proposal": AdaptiveProposal.from_dict(state["theta_proposal"]),
    }


def _classifier_kwargs(state: dict | None, mode: str) -> dict:
    if state is None:
        return {}
    if state.get("mode", mode) != mode:
        raise ConfigError(f"warm-start classifier was fit in mode {state['mode']}, analysis uses {mode}")
    return {
        "state": LatentState(state["zeta"], state["mu_zeta"], state["lam_zeta"]),
        "proposal": AdaptiveProposal.from_dict(state["proposal"]),
    }


# -- chain jobs ------------------------------------------------------------------------


def _build_sampler(kind: str, cfg: AnalysisConfig, data, k: int):
    cal, fail = data.calibration, data.failures
    priors = cfg.priors()
    if kind == "classifier":
        kw = _classifier_kwargs(_warm(cfg, "classifier", k), cfg.slice_mode)
        s = LatentSampler(fail, stream(cfg.seed, k, LATENT), cfg.slice_mode, cfg.kernels.latent, **kw)
        return s, [[cfg.seed, k, LATENT]]
    if kind == "calibration":
        kw = _calibration_kwargs(_warm(cfg, "calibration", k), cal.dx, cal.dt)
        s = CalibrationSampler(cal, priors, stream(cfg.seed, k, CALIBRATION), kernels=_kernels(cfg), **kw)
        return s, [[cfg.seed, k, CALIBRATION]]
    kw = _calibration_kwargs(_warm(cfg, "calibration", k), cal.dx, cal.dt)
    lk = _classifier_kwargs(_warm(cfg, "classifier", k), cfg.slice_mode)
    if lk:
        kw.update(latent_state=lk["state"], latent_proposal=lk["proposal"])
    s = CoupledSampler(
        cal,
        fail,
        priors,
        _admissibility(cfg, cal.dx),
        cfg.seed,
        k,
        kernels=_kernels(cfg),
        latent_family=cfg.kernels.latent,
        **kw,
    )
    return s, [[cfg.seed, k, LATENT], [cfg.seed, k, CALIBRATION], [cfg.seed, k, GATE]]


def _rng_states(sampler) -> dict:
    if hasattr(sampler, "rng"):
        parts = {"rng": sampler}
    else:
        parts = {n: getattr(sampler, n) for n in ("latent", "calibration", "gate")}
    return {n: o.rng.bit_generator.state for n, o in parts.items()}


def run_chain_job(kind: str, cfg: AnalysisConfig, k: int, out: str) -> dict:
    """Run chain ``k`` of an analysis and write its archive, state and diagnostics."""
    out = Path(out)
    data = _load(cfg, require_failures=kind != "calibration")
    sampler, streams = _build_sampler(kind, cfg, data, k)
    chain = Chain(sampler.columns(), cfg.iterations, cfg.burnin if cfg.iterations else 0, cfg.thin)
    loocv = []

    def callback(t):
        if kind == "classifier" and cfg.loocv_every and t % cfg.loocv_every == 0:
            loocv.append((t, sampler.loocv()))

    meta = {
        "kind": kind,
        "chain": k,
        "seed": cfg.seed,
        "streams": streams,
        "config_hash": _hash(cfg),
        "t_ranges": cfg.t_ranges,
        "output_scale": data.calibration.output_scale,
    }
    freeze_at = cfg.burnin if cfg.freeze_after_burnin else None
    try:
        run_chain(sampler, chain, cfg.iterations, freeze_at=freeze_at, callback=callback)
    except ChainAborted as exc:
        meta.update(aborted_at=exc.iteration, error=str(exc), jitter_events=sampler.jitter_events)
        dataio.write_chain(out / f"chain_{k}.csv", chain, meta)
        dataio.dump_json(
            out / f"checkpoint_{k}.json",
            {"iteration": exc.iteration, "rng": _rng_states(sampler), "state": sampler.export_state()},
        )
        raise NumericalFailure(f"chain {k}: {exc}; checkpoint written to {out / f'checkpoint_{k}.json'}") from exc
    meta.update(jitter_events=sampler.jitter_events, acceptance=sampler.acceptance())
    dataio.write_chain(out / f"chain_{k}.csv", chain, meta)
    dataio.dump_json(out / f"state_{k}.json", sampler.export_state())
    if kind == "classifier":
        dataio.write_table(out / f"loocv_{k}.csv", ["iteration", "rate"], loocv)
    return {"meta": meta, "loocv": loocv}


def _run_chains(kind: str, cfg: AnalysisConfig, out: Path) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    # fail fast on data problems before spawning workers
    _load(cfg, require_failures=kind != "calibration")
    ids = list(range(cfg.chains))
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(min(cfg.workers, cfg.chains)) as ex:
            results = list(ex.map(run_chain_job, [kind] * len(ids), [cfg] * len(ids), ids, [str(out)] * len(ids)))
    else:
        results = [run_chain_job(kind, cfg, k, str(out)) for k in ids]
    _merge(out, ids, results)
    return results


def _merge(out: Path, ids, results) -> Chain:
    rows, columns = [], None
    for k in ids:
        c, _ = dataio.read_chain(out / f"chain_{k}.csv")
        columns = ["chain"] + c.columns
        rows.extend([[float(k)] + r for r in c.rows])
    first = results[0]["meta"]
    merged = Chain(columns, len(rows), 0, 1, rows)
    meta = {
        "kind": first["kind"],
        "chains": len(ids),
        "seed": first["seed"],
        "config_hash": first["config_hash"],
        "t_ranges": first["t_ranges"],
        "jitter_events": [r["meta"]["jitter_events"] for r in results],
        "acceptance": [r["meta"]["acceptance"] for r in results],
    }
    dataio.write_chain(out / "chain.csv", merged, meta)
    return merged


def _theta_summaries(chain: Chain) -> dict:
    cols = [c for c in chain.columns if c.startswith("theta")]
    if not len(chain):
        return {}
    return {c: summarize(chain.column(c)) for c in cols}


# -- subcommands -------------------------------------------------------------------------


def cmd_generate_toy(args) -> int:
    out = Path(args.out)
    spec = ToySpec(seed=args.seed if args.seed is not None else 1, failures=not args.no_failures)
    cal, fail, truth = generate_toy(spec)
    dataio.write_dataset(out, cal, fail if spec.failures else None)
    dataio.dump_json(out / "truth.json", {**truth.to_dict(), "seed": spec.seed, "N": cal.N, "M": cal.M, "M0": fail.M0})
    dataio.dump_json(
        out / "config.json",
        {
            "data": {"dir": "."},
            "theta_priors": [{"kind": "uniform", "a": 0.0, "b": 1.0}],
            "x_ranges": [[0.0, 1.0]],
            "seed": spec.seed,
            "xtilde": {"size": 50, "kind": "grid"},
        },
    )
    print(f"wrote toy data (N={cal.N}, M={cal.M}, M0={fail.M0}) to {out}")
    return EXIT_OK


def cmd_fit_classifier(args) -> int:
    cfg = _config(args, "classify")
    out = Path(args.out)
    results = _run_chains("classifier", cfg, out)
    # burn-in LOOCV rates stay in loocv_k.csv but not in the posterior summary
    rates = np.array([r for res in results for (t, r) in res["loocv"] if t > cfg.burnin])
    summary = {"acceptance": [r["meta"]["acceptance"] for r in results]}
    if rates.size:
        summary["loocv"] = summarize(rates)
    dataio.dump_json(out / "summary.json", summary)
    if rates.size:
        s = summary["loocv"]
        print(f"LOOCV median {s['median']:.4f}, 95% interval ({s['ci95'][0]:.4f}, {s['ci95'][1]:.4f})")
    return EXIT_OK


def cmd_fit_calibration(args) -> int:
    cfg = _config(args, "calibrate")
    out = Path(args.out)
    results = _run_chains("calibration", cfg, out)
    chain, _ = dataio.read_chain(out / "chain.csv")
    summary = {"theta": _theta_summaries(chain), "acceptance": [r["meta"]["acceptance"] for r in results]}
    dataio.dump_json(out / "summary.json", summary)
    _print_theta(summary["theta"])
    return EXIT_OK


def cmd_fit_coupled(args) -> int:
    cfg = _config(args, "coupled")
    out = Path(args.out)
    results = _run_chains("coupled", cfg, out)
    chain, _ = dataio.read_chain(out / "chain.csv")
    summary = {"theta": _theta_summaries(chain), "acceptance": [r["meta"]["acceptance"] for r in results]}
    if len(chain):
        summary["admitted_fraction"] = float(chain.column("admitted").mean())
    dataio.dump_json(out / "summary.json", summary)
    _print_theta(summary["theta"])
    return EXIT_OK


def _print_theta(s: dict) -> None:
    for name, v in s.items():
        print(f"{name}: mean {v['mean']:.4f}, 95% interval ({v['ci95'][0]:.4f}, {v['ci95'][1]:.4f})")


def _spread(n_total: int, n: int) -> np.ndarray:
    if n_total == 0:
        raise CLIError("chain archive has no rows")
    return np.unique(np.linspace(0, n_total - 1, min(n, n_total)).round().astype(int))


def cmd_b_matrix(args) -> int:
    cfg = _config(args, "bmatrix")
    b = cfg.bmatrix
    cal_path = args.calibration or b.calibration
    cls_path = args.classifier or b.classifier
    if not cal_path or not cls_path:
        raise ConfigError("b-matrix needs a calibration chain and a classifier chain")
    data = _load(cfg, require_failures=True)
    theta_chain, _ = dataio.read_chain(cal_path)
    latent_chain, _ = dataio.read_chain(cls_path)
    priors = cfg.priors()
    theta_cols = [c for c in theta_chain.columns if c.startswith("theta")]
    if len(theta_cols) != len(priors):
        raise ConfigError(f"calibration chain has {len(theta_cols)} theta columns, config has {len(priors)} priors")
    theta_nat = theta_chain.array()[:, [theta_chain.columns.index(c) for c in theta_cols]]
    theta_nat = theta_nat[_spread(len(theta_nat), b.n_theta)]
    theta_unit = np.column_stack([to_unit(theta_nat[:, i], p) for i, p in enumerate(priors)])

    lat_cols = latent_chain.columns
    lat_arr = latent_chain.array()
    if lat_cols and lat_cols[0] == "chain":
        lat_arr, lat_cols = lat_arr[:, 1:], lat_cols[1:]
    if not lat_cols or lat_cols[0] != "mu_zeta":
        raise ConfigError(f"{cls_path} is not a classifier chain")
    n_lam = sum(c.startswith("lam_zeta") for c in lat_cols)
    expect = data.failures.design.shape[1] if cfg.slice_mode == "c2" else data.failures.dt
    if n_lam != expect:
        raise ConfigError(f"classifier chain has {n_lam} length-scales, {cfg.slice_mode} needs {expect}")
    states = [state_from_row(lat_arr[i], n_lam) for i in _spread(len(lat_arr), b.n_latent)]

    acfg = _admissibility(cfg, data.failures.dx)
    B = build_b_matrix(theta_unit, states, data.failures, acfg, cfg.seed, cfg.kernels.latent, cfg.workers)
    s = admissibility_summary(B, b.low_cut, b.high_cut)
    out = Path(args.out)
    dataio.write_table(out / "bmatrix.csv", [f"theta_{j + 1}" for j in range(B.entries.shape[1])], B.entries)
    names = [f"theta{i + 1}" for i in range(theta_nat.shape[1])]
    dataio.write_table(
        out / "pointwise.csv",
        names + ["pi_hat", "weight"],
        np.column_stack([theta_nat, s.pointwise, s.resampling_weights]),
    )
    dataio.write_table(out / "row_means.csv", ["pi"], s.row_means.reshape(-1, 1))
    summary = {"kind": "bmatrix", "seed": cfg.seed, "config_hash": _hash(cfg), **s.to_dict()}
    dataio.dump_json(out / "summary.json", summary)
    print(
        f"always-fail {s.always_fail:.3f}, always-succeed {s.always_succeed:.3f}, "
        f"pi range ({s.row_means.min():.3f}, {s.row_means.max():.3f})"
    )
    return EXIT_OK


def cmd_summarize(args) -> int:
    out = Path(args.out)
    report = {}
    theta_tables = {}
    for run in args.runs:
        run = Path(run)
        label = run.name
        if (run / "bmatrix.csv").exists():
            _, pw = dataio.read_table(run / "pointwise.csv")
            _, rm = dataio.read_table(run / "row_means.csv")
            t = density_table(pw[:, -2], args.bins)
            dataio.write_table(out / f"{label}_pointwise_density.csv", ["mid", "density", "cdf"], t)
            t = density_table(rm[:, 0], args.bins)
            dataio.write_table(out / f"{label}_pi_density.csv", ["mid", "density", "cdf"], t)
            report[label] = dataio.load_json(run / "summary.json")
            continue
        path = run / "chain.csv" if run.is_dir() else run
        chain, meta = dataio.read_chain(path)
        if not len(chain):
            raise CLIError(f"{path}: empty chain")
        ranges = meta.get("t_ranges") or []
        entry = {"kind": meta.get("kind"), "theta": _theta_summaries(chain)}
        for i, name in enumerate(c for c in chain.columns if c.startswith("theta")):
            lo, hi = ranges[i] if i < len(ranges) else (0.0, 1.0)
            theta_tables.setdefault(name, []).append((label, density_table(chain.column(name), args.bins, lo, hi)))
        if args.interval and "theta1" in chain.columns and "theta2" not in chain.columns:
            entry["pi_hat"] = pi_hat(chain.column("theta1"), tuple(args.interval))
        report[label] = entry
    for name, tables in theta_tables.items():
        header = ["mid"]
        cols = [tables[0][1][:, 0]]
        for label, t in tables:
            header += [f"{label}_density", f"{label}_cdf"]
            cols += [t[:, 1], t[:, 2]]
        dataio.write_table(out / f"{name}_density.csv", header, np.column_stack(cols))
    dataio.dump_json(out / "report.json", report)
    print(f"wrote summaries of {len(args.runs)} run(s) to {out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------------


def _run_flags(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="analysis config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--mode", choices=("c1", "c2"), help="latent slice mode")
    p.add_argument("--ptol", type=float, help="tolerated failing fraction of the slice")
    p.add_argument("--xtilde-size", type=int, dest="xtilde_size")
    p.add_argument("--warm-start", action="append", dest="warm_start", default=[], help="state.json (repeatable)")
    p.add_argument("--workers", type=int, help="parallel processes for chains / B-matrix rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="failcal",
        description="Calibration with informative simulator failures.",
        epilog=SCHEMA_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-toy", help="write the synthetic 18 x 8 toy problem")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--no-failures", action="store_true")
    p.set_defaults(func=cmd_generate_toy)

    for name, func, text in (
        ("fit-classifier", cmd_fit_classifier, "fit the latent failure classifier"),
        ("fit-calibration", cmd_fit_calibration, "fit the calibration model ignoring failures"),
        ("fit-coupled", cmd_fit_coupled, "fit calibration constrained by the failure classifier"),
    ):
        p = sub.add_parser(name, help=text, epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        _run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("b-matrix", help="admissibility of calibration draws under classifier draws")
    _run_flags(p)
    p.add_argument("--calibration", help="calibration chain archive (chain.csv)")
    p.add_argument("--classifier", help="classifier chain archive (chain.csv)")
    p.set_defaults(func=cmd_b_matrix)

    p = sub.add_parser("summarize", help="density/CDF tables and summaries of finished runs")
    p.add_argument("runs", nargs="+", help="run directories or chain archives")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--interval", type=float, nargs=2, metavar=("LOW", "HIGH"), help="report pi-hat for (LOW, HIGH)")
    p.set_defaults(func=cmd_summarize)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (NumericalFailure, ChainAborted, FactorizationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"invalid configuration: {exc}\n\n{SCHEMA_HELP}", file=sys.stderr)
        return EXIT_INVALID
    except (dataio.DataError, CLIError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_cli())
