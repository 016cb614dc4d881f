"""Synthetic data in the shape of a large multiphase-flow study, run end to end.

    python scripts/mfix_schema_demo.py --out runs/mfix --iterations 300

The real study has 4 variable inputs, 14 calibration inputs and 471 simulator
runs of which 136 failed; that data is not public. This script fabricates a
dataset with the same column layout and natural-unit ranges, writes the three
input files plus a config, and runs short classifier and calibration fits so
the ingestion path and the cost per iteration can be checked at that size.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from failcal import dataio
from failcal.cli import run_cli

DX, DT = 4, 14
N_RUNS, N_FIELD = 471, 20


def make_dataset(out: Path, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    x_ranges = [[0.5 * (i + 1), 2.0 * (i + 1)] for i in range(DX)]
    t_ranges = [[0.1 * (j + 1), 0.1 * (j + 1) + 1.0 + 0.25 * j] for j in range(DT)]
    lo = np.array([r[0] for r in x_ranges + t_ranges])
    hi = np.array([r[1] for r in x_ranges + t_ranges])
    unit = qmc.LatinHypercube(d=DX + DT, seed=rng).random(N_RUNS)
    runs = lo + (hi - lo) * unit
    w = rng.normal(size=DX + DT)
    response = np.sin(unit @ w) + 0.5 * unit[:, DX]
    # failures where a smooth score of the inputs is high; threshold gives 136 failures
    score = unit[:, DX] + unit[:, DX + 1] - 0.5 * unit[:, 0] + 0.1 * rng.normal(size=N_RUNS)
    z = (score < np.sort(score)[N_RUNS - 136]).astype(float)
    xn, tn = dataio.x_names(DX), dataio.t_names(DT)
    dataio.write_table(out / dataio.FAILURES_FILE, xn + tn + ["z"], np.column_stack([runs, z]))
    ok = z == 1
    dataio.write_table(out / dataio.SIMULATOR_FILE, ["y"] + xn + tn, np.column_stack([response[ok], runs[ok]]))
    xu = rng.random((N_FIELD, DX))
    tu = np.full(DT, 0.5)
    y = np.sin(np.hstack([xu, np.tile(tu, (N_FIELD, 1))]) @ w) + 0.25 + 0.02 * rng.normal(size=N_FIELD)
    dataio.write_table(out / dataio.FIELD_FILE, ["y"] + xn, np.column_stack([y, lo[:DX] + (hi[:DX] - lo[:DX]) * xu]))
    return {
        "data": {"dir": "."},
        "x_ranges": x_ranges,
        "theta_priors": [{"kind": "uniform", "a": a, "b": b} for a, b in t_ranges],
        "xtilde": {"size": 50, "kind": "lhs"},
        "seed": seed,
    }


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/mfix")
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--iterations", type=int, default=300)
    a = p.parse_args(argv)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = make_dataset(out, a.seed)
    cfg.update(iterations=a.iterations, burnin=a.iterations // 3, loocv_every=max(1, a.iterations // 10))
    (out / "config.json").write_text(json.dumps(cfg, indent=2))
    loaded = dataio.load_dataset(out, x_ranges=cfg["x_ranges"], t_ranges=[[d["a"], d["b"]] for d in cfg["theta_priors"]])
    f = loaded.failures
    print(f"loaded D_x={f.dx}, D_t={f.dt}, runs={f.M_tot} ({f.M} succeeded, {f.M0} failed), field N={loaded.calibration.N}")
    for cmd in ("fit-classifier", "fit-calibration"):
        code = run_cli([cmd, "--config", str(out / "config.json"), "--out", str(out / cmd.split("-")[1])])
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
