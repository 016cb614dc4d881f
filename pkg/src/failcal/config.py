"""Analysis configuration read from a JSON document.

Example::

    {
      "iterations": 20000, "burnin": 4000, "thin": 3,
      "slice_mode": "c2", "p_tol": 0.0,
      "xtilde": {"size": 200, "kind": "lhs"},
      "theta_priors": [{"kind": "uniform", "a": 0, "b": 1}],
      "x_ranges": [[0, 1]],
      "data": {"dir": "toy/"},
      "seed": 1, "chains": 1
    }

``theta_priors`` doubles as the range table of the ``t`` columns: simulator
inputs are scaled to the unit cube with each prior's ``(a, b)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .kernels import FAMILIES
from .mcmc import prior_from_dict

ANALYSES = ("calibrate", "classify", "coupled", "bmatrix")
SCHEMA_HELP = """\
config keys (JSON object; all optional except where a command needs data):
  iterations, burnin, thin      chain length, dropped prefix, recording stride
  mode                          calibrate | classify | coupled | bmatrix
  slice_mode                    c1 | c2 (latent kernel over t only, or over (x, t))
  p_tol                         tolerated failing fraction of the theta slice, in [0, 1]
  xtilde                        {"size": int, "kind": "grid" | "lhs"}
  theta_priors                  list of {"kind": "uniform", "a", "b"} |
                                {"kind": "truncnormal", "mean", "var", "a", "b"} |
                                {"kind": "scaledbeta", "alpha", "beta", "a", "b"}
  x_ranges                      list of [a, b], one per x column (default [0, 1])
  kernels                       {"eta": f, "delta": f, "latent": f}, f in sqexp | matern32
  seed, chains, workers         master seed, number of chains, parallel processes
  loocv_every                   LOOCV stride of the classifier (0 disables)
  freeze_after_burnin           stop proposal adaptation after burn-in
  warm_start                    list of state.json files from earlier fits
  data                          {"dir": path} or {"field", "simulator", "failures"}
  bmatrix                       {"calibration": chain.csv, "classifier": chain.csv,
                                 "n_theta": int, "n_latent": int,
                                 "low_cut": 0.1, "high_cut": 0.9}
"""


class ConfigError(ValueError):
    """Invalid analysis configuration."""


@dataclass
class XTildeConfig:
    size: int = 200
    kind: str = "lhs"


@dataclass
class KernelConfig:
    eta: str = "sqexp"
    delta: str = "sqexp"
    latent: str = "matern32"


@dataclass
class DataConfig:
    dir: str | None = None
    field: str | None = None
    simulator: str | None = None
    failures: str | None = None


@dataclass
class BMatrixConfig:
    calibration: str | None = None
    classifier: str | None = None
    n_theta: int = 500
    n_latent: int = 100
    low_cut: float = 0.1
    high_cut: float = 0.9


@dataclass
class AnalysisConfig:
    iterations: int = 10000
    burnin: int = 2000
    thin: int = 1
    mode: str = "coupled"
    slice_mode: str = "c2"
    p_tol: float = 0.0
    xtilde: XTildeConfig = field(default_factory=XTildeConfig)
    theta_priors: list = field(default_factory=lambda: [{"kind": "uniform", "a": 0.0, "b": 1.0}])
    x_ranges: list | None = None
    kernels: KernelConfig = field(default_factory=KernelConfig)
    seed: int = 0
    chains: int = 1
    workers: int = 1
    loocv_every: int = 200
    freeze_after_burnin: bool = False
    warm_start: list = field(default_factory=list)
    data: DataConfig = field(default_factory=DataConfig)
    bmatrix: BMatrixConfig = field(default_factory=BMatrixConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ConfigError("iterations must be a non-negative integer")
        if not isinstance(self.thin, int) or self.thin < 1:
            raise ConfigError("thin must be an integer >= 1")
        if self.iterations > 0 and not (0 <= self.burnin < self.iterations):
            raise ConfigError(f"burnin must satisfy 0 <= burnin < iterations, got {self.burnin}")
        if self.mode not in ANALYSES:
            raise ConfigError(f"mode must be one of {ANALYSES}, got {self.mode!r}")
        if self.slice_mode not in ("c1", "c2"):
            raise ConfigError(f"slice_mode must be c1 or c2, got {self.slice_mode!r}")
        if not 0.0 <= float(self.p_tol) <= 1.0:
            raise ConfigError("p_tol must lie in [0, 1]")
        if self.xtilde.kind not in ("grid", "lhs") or self.xtilde.size < 1:
            raise ConfigError("xtilde needs size >= 1 and kind grid or lhs")
        for name in ("eta", "delta", "latent"):
            if getattr(self.kernels, name) not in FAMILIES:
                raise ConfigError(f"kernels.{name} must be one of {FAMILIES}")
        if self.chains < 1 or self.workers < 1:
            raise ConfigError("chains and workers must be >= 1")
        if self.loocv_every < 0:
            raise ConfigError("loocv_every must be >= 0")
        if not self.theta_priors:
            raise ConfigError("need at least one theta prior")
        try:
            self.priors()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad theta prior: {exc}") from None
        if self.x_ranges is not None:
            for r in self.x_ranges:
                if len(r) != 2 or not float(r[0]) < float(r[1]):
                    raise ConfigError(f"x range {r} must be [a, b] with a < b")
        b = self.bmatrix
        if b.n_theta < 1 or b.n_latent < 1 or not 0 <= b.low_cut <= b.high_cut <= 1:
            raise ConfigError("bmatrix needs n_theta, n_latent >= 1 and 0 <= low_cut <= high_cut <= 1")

    def priors(self):
        return [prior_from_dict(d) for d in self.theta_priors]

    @property
    def t_ranges(self):
        return [[p.a, p.b] for p in self.priors()]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        nested = {"xtilde": XTildeConfig, "kernels": KernelConfig, "data": DataConfig, "bmatrix": BMatrixConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub_known = {f.name for f in fields(typ)}
                bad = sorted(set(d[key]) - sub_known)
                if bad:
                    raise ConfigError(f"unknown key(s) in {key}: {', '.join(bad)}")
                d[key] = typ(**d[key])
        if isinstance(d.get("warm_start"), str):
            d["warm_start"] = [d["warm_start"]]
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = cls.from_dict(raw)
        cfg.resolve_paths(path.parent)
        return cfg

    def resolve_paths(self, base: Path) -> None:
        """Make relative data and warm-start paths relative to the config file."""

        def fix(p):
            if p is None:
                return None
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        for name in ("dir", "field", "simulator", "failures"):
            setattr(self.data, name, fix(getattr(self.data, name)))
        self.bmatrix.calibration = fix(self.bmatrix.calibration)
        self.bmatrix.classifier = fix(self.bmatrix.classifier)
        self.warm_start = [fix(p) for p in self.warm_start]
