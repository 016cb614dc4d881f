"""Full toy pipeline through the command line interface.

    python scripts/toy_experiment.py --out runs/toy --seed 1

Steps: generate the toy data, fit the classifier and the unconstrained
calibration, build the B-matrix, run the coupled sampler warm-started from
both fits, then tabulate everything with ``summarize``. Sizes default to the
acceptance-suite settings; ``--quick`` shrinks them for a smoke run.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from failcal.cli import run_cli

FULL = {
    "classifier": dict(iterations=60000, burnin=10000, thin=100, loocv_every=200),
    "calibration": dict(iterations=20000, burnin=4000, thin=4),
    "coupled": dict(iterations=50000, burnin=10000, thin=4),
}
QUICK = {
    "classifier": dict(iterations=3000, burnin=1000, thin=10, loocv_every=100),
    "calibration": dict(iterations=3000, burnin=1000, thin=2),
    "coupled": dict(iterations=3000, burnin=1000, thin=2),
    "bmatrix": dict(n_theta=100, n_latent=50),
}


def write_config(path: Path, base: dict, **overrides) -> Path:
    cfg = {**base, **overrides}
    path.write_text(json.dumps(cfg, indent=2))
    return path


def step(argv) -> None:
    t0 = time.time()
    code = run_cli([str(a) for a in argv])
    print(f"  [{argv[0]} exit {code}, {time.time() - t0:.1f}s]")
    if code != 0:
        sys.exit(code)


def run_pipeline(out: Path, seed: int, sizes: dict = FULL, slice_mode: str = "c2") -> Path:
    out = Path(out)
    toy = out / "toy"
    step(["generate-toy", "--out", toy, "--seed", seed])
    base = json.loads((toy / "config.json").read_text())
    base["data"] = {"dir": str(toy.resolve())}
    base["slice_mode"] = slice_mode

    cfg = write_config(out / "classifier.json", base, **sizes["classifier"])
    step(["fit-classifier", "--config", cfg, "--out", out / "classifier"])
    cfg = write_config(out / "calibration.json", base, **sizes["calibration"])
    step(["fit-calibration", "--config", cfg, "--out", out / "calibration"])
    cfg = write_config(
        out / "bmatrix.json",
        base,
        bmatrix={"calibration": str((out / "calibration" / "chain.csv").resolve()),
                 "classifier": str((out / "classifier" / "chain.csv").resolve()),
                 **sizes.get("bmatrix", {})},
    )
    step(["b-matrix", "--config", cfg, "--out", out / "bmatrix"])
    cfg = write_config(
        out / "coupled.json",
        base,
        warm_start=[str((out / "classifier" / "state_0.json").resolve()),
                    str((out / "calibration" / "state_0.json").resolve())],
        **sizes["coupled"],
    )
    step(["fit-coupled", "--config", cfg, "--out", out / "coupled"])
    truth = json.loads((toy / "truth.json").read_text())
    step(
        ["summarize", out / "calibration", out / "coupled", out / "bmatrix",
         "--out", out / "report", "--interval", *truth["band"]]
    )
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mode", choices=("c1", "c2"), default="c2")
    p.add_argument("--quick", action="store_true")
    a = p.parse_args(argv)
    run_pipeline(Path(a.out), a.seed, QUICK if a.quick else FULL, a.mode)


if __name__ == "__main__":
    main()
