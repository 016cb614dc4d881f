"""Delimited-text data files and chain archives.

Three input files describe an analysis:

``field.csv``       columns ``y, x1..xDx``
``simulator.csv``   columns ``y, x1..xDx, t1..tDt`` (successful runs only)
``failures.csv``    columns ``x1..xDx, t1..tDt, z`` (every run, ``z = 1`` for success)

Values are written with ``repr`` so that a write/read cycle reproduces every
float exactly. Inputs are mapped to the unit cube with per-column ranges
``(a, b)``: ``unit = (v - a) / (b - a)``.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .koh import CalibrationDataset
from .latent import FailureDataset
from .mcmc import Chain

FIELD_FILE = "field.csv"
SIMULATOR_FILE = "simulator.csv"
FAILURES_FILE = "failures.csv"
RANGE_TOL = 1e-12


class DataError(ValueError):
    """Malformed or out-of-range input data."""


# -- low-level tables ---------------------------------------------------------


def write_table(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and float array of a comma-separated file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {len(rows) + 1} (line {lineno}) has {len(rec)} fields, expected {len(header)}")
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                raise DataError(f"{path}: row {len(rows) + 1} (line {lineno}) has a non-numeric entry") from None
    return header, np.asarray(rows, dtype=float).reshape(len(rows), len(header))


def _columns(path, header, arr, names) -> np.ndarray:
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    return arr[:, [header.index(n) for n in names]]


def _count_prefix(header, prefix) -> int:
    k = 0
    while f"{prefix}{k + 1}" in header:
        k += 1
    return k


def x_names(dx):
    return [f"x{i + 1}" for i in range(dx)]


def t_names(dt):
    return [f"t{i + 1}" for i in range(dt)]


# -- scaling -------------------------------------------------------------------


def _ranges(ranges, k):
    if ranges is None:
        return np.array([[0.0, 1.0]] * k)
    r = np.asarray(ranges, dtype=float).reshape(-1, 2)
    if r.shape[0] != k:
        raise DataError(f"{r.shape[0]} ranges given for {k} columns")
    if np.any(~(r[:, 1] > r[:, 0])):
        raise DataError("every range needs a < b")
    return r


def to_unit_cube(values, ranges, path="data", names=None) -> np.ndarray:
    """Scale columns to [0, 1]; raise :class:`DataError` naming the first offending row."""
    values = np.asarray(values, dtype=float)
    r = np.asarray(ranges, dtype=float)
    u = (values - r[:, 0]) / (r[:, 1] - r[:, 0])
    bad = (u < -RANGE_TOL) | (u > 1 + RANGE_TOL) | ~np.isfinite(u)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        col = names[j] if names else f"column {j + 1}"
        raise DataError(
            f"{path}: row {i + 1} has {col} = {float(values[i, j])!r} "
            f"outside its range [{float(r[j, 0])!r}, {float(r[j, 1])!r}]"
        )
    return np.clip(u, 0.0, 1.0)


def from_unit_cube(unit, ranges) -> np.ndarray:
    r = np.asarray(ranges, dtype=float)
    return r[:, 0] + (r[:, 1] - r[:, 0]) * np.asarray(unit, dtype=float)


# -- datasets --------------------------------------------------------------------


@dataclass
class LoadedData:
    calibration: CalibrationDataset
    failures: FailureDataset
    x_ranges: np.ndarray
    t_ranges: np.ndarray
    # natural-unit copy before standardization, kept for reports
    raw: CalibrationDataset


def load_dataset(
    directory=None,
    *,
    field=None,
    simulator=None,
    failures=None,
    x_ranges=None,
    t_ranges=None,
    standardize: bool = True,
    require_failures: bool = False,
) -> LoadedData:
    """Read the three files, scale inputs to the unit cube and standardize the output.

    Column counts come from the ``x_ranges``/``t_ranges`` lengths when given and
    otherwise from the simulator header. Failure rows are put successes-first.
    """
    d = Path(directory) if directory is not None else Path(".")
    field = Path(field) if field is not None else d / FIELD_FILE
    simulator = Path(simulator) if simulator is not None else d / SIMULATOR_FILE
    failures = Path(failures) if failures is not None else d / FAILURES_FILE

    sh, sa = read_table(simulator)
    dx = len(x_ranges) if x_ranges is not None else _count_prefix(sh, "x")
    dt = len(t_ranges) if t_ranges is not None else _count_prefix(sh, "t")
    if dt < 1:
        raise DataError(f"{simulator}: no calibration columns t1..")
    xr, tr = _ranges(x_ranges, dx), _ranges(t_ranges, dt)
    xn, tn = x_names(dx), t_names(dt)

    fh, fa = read_table(field)
    if fa.shape[0] == 0:
        raise DataError(f"{field}: no field observations")
    if sa.shape[0] == 0:
        raise DataError(f"{simulator}: no simulator runs")
    y = _columns(field, fh, fa, ["y"])[:, 0]
    X = to_unit_cube(_columns(field, fh, fa, xn), xr, field, xn) if dx else np.zeros((y.size, 0))
    eta = _columns(simulator, sh, sa, ["y"])[:, 0]
    Xs = to_unit_cube(_columns(simulator, sh, sa, xn), xr, simulator, xn) if dx else np.zeros((eta.size, 0))
    Ts = to_unit_cube(_columns(simulator, sh, sa, tn), tr, simulator, tn)
    for name, v in (("y", y), ("simulator y", eta)):
        if not np.all(np.isfinite(v)):
            raise DataError(f"non-finite value in {name}")
    raw = CalibrationDataset(y=y, X=X, eta=eta, Xstar=Xs, Tstar=Ts)
    cal = raw.standardized() if standardize else raw

    if failures.exists():
        gh, ga = read_table(failures)
        z = _columns(failures, gh, ga, ["z"])[:, 0]
        bad = np.flatnonzero((z != 0) & (z != 1))
        if bad.size:
            raise DataError(f"{failures}: row {bad[0] + 1} has z = {float(z[bad[0]])!r}, expected 0 or 1")
        design = np.hstack(
            [
                to_unit_cube(_columns(failures, gh, ga, xn), xr, failures, xn) if dx else np.zeros((z.size, 0)),
                to_unit_cube(_columns(failures, gh, ga, tn), tr, failures, tn),
            ]
        )
        fail = FailureDataset(z=z.astype(int), design=design, dx=dx)
    elif require_failures:
        raise DataError(f"{failures}: file not found")
    else:
        fail = FailureDataset(z=np.ones(Xs.shape[0], dtype=int), design=np.hstack([Xs, Ts]), dx=dx)
    if require_failures and (fail.M == 0 or fail.M0 == 0):
        raise DataError(f"{failures}: need at least one success and one failure (have {fail.M} / {fail.M0})")
    return LoadedData(cal, fail, xr, tr, raw)


def write_dataset(directory, cal: CalibrationDataset, fail: FailureDataset | None = None, x_ranges=None, t_ranges=None):
    """Write the three input files in natural units (inverse of :func:`load_dataset` scaling)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    xr, tr = _ranges(x_ranges, cal.dx), _ranges(t_ranges, cal.dt)
    xn, tn = x_names(cal.dx), t_names(cal.dt)
    s = cal.output_scale
    X = from_unit_cube(cal.X, xr)
    write_table(d / FIELD_FILE, ["y"] + xn, np.column_stack([cal.y * s, X]))
    sim = np.column_stack([cal.eta * s, from_unit_cube(cal.Xstar, xr), from_unit_cube(cal.Tstar, tr)])
    write_table(d / SIMULATOR_FILE, ["y"] + xn + tn, sim)
    paths = [d / FIELD_FILE, d / SIMULATOR_FILE]
    if fail is not None:
        inv = np.empty_like(fail.order)
        inv[fail.order] = np.arange(fail.order.size)
        design = fail.design[inv]
        z = fail.z[inv]
        nat = np.hstack([from_unit_cube(design[:, : fail.dx], xr), from_unit_cube(design[:, fail.dx :], tr)])
        write_table(d / FAILURES_FILE, xn + tn + ["z"], np.column_stack([nat, z]))
        paths.append(d / FAILURES_FILE)
    return paths


# -- chain archives ------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_chain(path, chain: Chain, meta: dict) -> None:
    """Chain rows to ``path`` and metadata to ``path`` with a ``.json`` suffix."""
    path = Path(path)
    write_table(path, chain.columns, chain.rows)
    meta = dict(meta)
    meta.update(
        columns=list(chain.columns),
        iterations=chain.iterations,
        burnin=chain.burnin,
        thin=chain.thin,
        rows=len(chain),
    )
    dump_json(path.with_suffix(".json"), meta)


def read_chain(path) -> tuple[Chain, dict]:
    path = Path(path)
    header, arr = read_table(path)
    meta_path = path.with_suffix(".json")
    meta = load_json(meta_path) if meta_path.exists() else {}
    chain = Chain(
        header,
        int(meta.get("iterations", len(arr))),
        int(meta.get("burnin", 0)),
        int(meta.get("thin", 1)),
        [list(r) for r in arr],
    )
    return chain, meta
