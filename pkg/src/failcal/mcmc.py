"""Shared MCMC machinery.

Bounded parameters are moved to the real line in two steps: a linear rescale of
the prior support ``[a, b]`` onto ``[0, 1]`` followed by the probit ``ndtri``.
Random-walk proposals are Gaussian on that real scale and are tuned with the
adaptive Metropolis scheme of Haario et al. (2001).

RNG streams
-----------
Every random quantity derives from one integer master seed through
``numpy.random.SeedSequence(seed, spawn_key=key)``:

* ``(chain, role)`` for the samplers of chain ``chain``; ``role`` is one of
  :data:`CALIBRATION`, :data:`LATENT`, :data:`GATE`, :data:`INIT`.
* ``(BMATRIX, i, j)`` for cell ``(i, j)`` of a B-matrix, so the matrix is the
  same whatever order (or process) its cells are computed in.
* ``(XTILDE,)`` for the space-filling slice design, drawn once per analysis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

CALIBRATION, LATENT, GATE, INIT = 0, 1, 2, 3
BMATRIX = 1000
XTILDE = 1001

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


# -- priors ------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        _check_bounds(self.a, self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, -math.log(self.b - self.a), -np.inf)

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class TruncNormal:
    mean: float
    var: float
    a: float
    b: float

    def __post_init__(self):
        _check_bounds(self.a, self.b)
        if not self.var > 0:
            raise ValueError("TruncNormal variance must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        sd = math.sqrt(self.var)
        mass = special.ndtr((self.b - self.mean) / sd) - special.ndtr((self.a - self.mean) / sd)
        z = (x - self.mean) / sd
        val = -0.5 * z * z - LOG_SQRT_2PI - math.log(sd) - math.log(mass)
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, val, -np.inf)

    def to_dict(self):
        return {"kind": "truncnormal", "mean": self.mean, "var": self.var, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class ScaledBeta:
    alpha: float
    beta: float
    a: float
    b: float

    def __post_init__(self):
        _check_bounds(self.a, self.b)
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("ScaledBeta shape parameters must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.a) / (self.b - self.a)
        inside = (u > 0) & (u < 1)
        us = np.where(inside, u, 0.5)
        val = (
            (self.alpha - 1) * np.log(us)
            + (self.beta - 1) * np.log1p(-us)
            - special.betaln(self.alpha, self.beta)
            - math.log(self.b - self.a)
        )
        return np.where(inside, val, -np.inf)

    def to_dict(self):
        return {"kind": "scaledbeta", "alpha": self.alpha, "beta": self.beta, "a": self.a, "b": self.b}


Prior = Uniform | TruncNormal | ScaledBeta


def _check_bounds(a, b):
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ValueError(f"prior bounds must be finite with a < b, got [{a}, {b}]")


def prior_from_dict(d: dict) -> Prior:
    kind = d.get("kind", "uniform").lower()
    if kind in ("uniform", "unif"):
        return Uniform(float(d["a"]), float(d["b"]))
    if kind in ("truncnormal", "trnorm"):
        return TruncNormal(float(d["mean"]), float(d["var"]), float(d["a"]), float(d["b"]))
    if kind in ("scaledbeta", "ssbeta"):
        return ScaledBeta(float(d["alpha"]), float(d["beta"]), float(d["a"]), float(d["b"]))
    raise ValueError(f"unknown prior kind {kind!r}")


# -- probit reparameterization --------------------------------------------------


def to_unit(x, prior: Prior):
    return (np.asarray(x, dtype=float) - prior.a) / (prior.b - prior.a)


def from_unit(u, prior: Prior):
    return prior.a + (prior.b - prior.a) * np.asarray(u, dtype=float)


def to_real(x, prior: Prior):
    """Natural value -> probit scale. ``x`` must lie strictly inside ``(a, b)``."""
    u = to_unit(x, prior)
    if np.any(~np.isfinite(u)) or np.any(u <= 0) or np.any(u >= 1):
        raise ValueError(f"value {x} not strictly inside prior support [{prior.a}, {prior.b}]")
    return special.ndtri(u)


def from_real(r, prior: Prior):
    return from_unit(special.ndtr(r), prior)


def log_jacobian(r, prior: Prior):
    """``log |d natural / d real|`` at probit-scale value ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r)):
        raise ValueError("log_jacobian needs a finite probit-scale value")
    return math.log(prior.b - prior.a) - 0.5 * r * r - LOG_SQRT_2PI


class ParamBlock:
    """A vector of bounded parameters sharing one Gaussian random-walk proposal.

    ``log_density(r)`` returns the summed natural-scale prior log density plus
    the log Jacobian, i.e. the log prior density on the probit scale. Values
    whose unit representation rounds to 0 or 1 get ``-inf``.
    """

    def __init__(self, priors):
        self.priors = list(priors)

    def __len__(self):
        return len(self.priors)

    def to_real(self, x):
        return np.array([float(to_real(v, p)) for v, p in zip(x, self.priors)])

    def from_real(self, r):
        return np.array([float(from_real(v, p)) for v, p in zip(r, self.priors)])

    def log_density(self, r) -> float:
        total = 0.0
        for v, p in zip(r, self.priors):
            u = float(special.ndtr(v))
            if not (0.0 < u < 1.0):
                return -np.inf
            x = float(from_unit(u, p))
            lp = float(p.logpdf(x))
            if not np.isfinite(lp):
                return -np.inf
            total += lp + float(log_jacobian(v, p))
        return total


# -- adaptive proposal ------------------------------------------------------


@dataclass
class AdaptiveProposal:
    """Haario-style adaptive Gaussian random walk.

    Before ``n0`` points have been seen the proposal covariance is the fixed
    diagonal ``init_scale**2 * I``; afterwards it is ``s_d * (cov + eps * I)``
    with ``s_d = 2.4**2 / d`` and ``cov`` the running sample covariance of
    every point passed to :meth:`update`.
    """

    dim: int
    init_scale: float = 0.1
    eps: float = 1e-6
    n0: int = 1000
    frozen: bool = False
    n: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None
    accepted: int = 0
    attempted: int = 0
    init_cov: np.ndarray = None
    _chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        d = self.dim
        if self.mean is None:
            self.mean = np.zeros(d)
        if self.m2 is None:
            self.m2 = np.zeros((d, d))
        if self.init_cov is None:
            self.init_cov = self.init_scale**2 * np.eye(d)

    @property
    def sd(self) -> float:
        return 2.4**2 / self.dim

    @property
    def empirical_cov(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros((self.dim, self.dim))
        return self.m2 / (self.n - 1)

    @property
    def cov(self) -> np.ndarray:
        if self.n < self.n0:
            return self.init_cov
        return self.sd * (self.empirical_cov + self.eps * np.eye(self.dim))

    def update(self, x) -> None:
        if self.frozen:
            return
        x = np.asarray(x, dtype=float)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + np.outer(delta, x - self.mean)
        if self.n >= self.n0:
            self._chol = None

    def freeze(self) -> None:
        self.frozen = True

    def propose(self, current, rng: np.random.Generator) -> np.ndarray:
        if self._chol is None:
            c = self.cov
            self._chol = np.linalg.cholesky(0.5 * (c + c.T))
        return np.asarray(current, dtype=float) + self._chol @ rng.standard_normal(self.dim)

    def tally(self, accepted: bool) -> None:
        self.attempted += 1
        self.accepted += int(bool(accepted))

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else float("nan")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "init_scale": self.init_scale,
            "eps": self.eps,
            "n0": self.n0,
            "frozen": self.frozen,
            "n": self.n,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
            "init_cov": self.init_cov.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptiveProposal":
        return cls(
            dim=int(d["dim"]),
            init_scale=float(d["init_scale"]),
            eps=float(d["eps"]),
            n0=int(d["n0"]),
            frozen=bool(d["frozen"]),
            n=int(d["n"]),
            mean=np.asarray(d["mean"], dtype=float),
            m2=np.asarray(d["m2"], dtype=float).reshape(int(d["dim"]), int(d["dim"])),
            init_cov=np.asarray(d["init_cov"], dtype=float).reshape(int(d["dim"]), int(d["dim"])),
        )


def metropolis_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Accept with probability ``min(1, exp(log_ratio))``.

    One uniform is always consumed so that RNG usage does not depend on the
    value of the ratio.
    """
    u = rng.random()
    if np.isnan(log_ratio) or log_ratio == -np.inf:
        return False
    return log_ratio >= 0 or math.log(u) < log_ratio


# -- chain storage ----------------------------------------------------------


@dataclass
class Chain:
    """Thinned post-burn-in draws.

    Iteration ``t`` (1-based) is stored when ``t > burnin`` and
    ``(t - burnin) % thin == 0``, giving ``(iterations - burnin) // thin`` rows.
    """

    columns: list
    iterations: int
    burnin: int = 0
    thin: int = 1
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.iterations > 0 and not (0 <= self.burnin < self.iterations):
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")

    @property
    def expected_length(self) -> int:
        return max(self.iterations - self.burnin, 0) // self.thin

    def wants(self, t: int) -> bool:
        return t > self.burnin and (t - self.burnin) % self.thin == 0

    def record(self, values) -> None:
        values = [float(v) for v in values]
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(values)

    def __len__(self):
        return len(self.rows)

    def array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float).reshape(len(self.rows), len(self.columns))

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, self.columns.index(name)]

    def select(self, prefix: str) -> np.ndarray:
        idx = [i for i, c in enumerate(self.columns) if c.startswith(prefix)]
        return self.array()[:, idx]


QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)


def summarize(values) -> dict:
    """Mean, sd, quantiles and 95% equal-tailed interval of a 1-d sample."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot summarize an empty chain")
    q = np.quantile(x, QUANTILES)
    return {
        "n": int(x.size),
        "mean": float(np.mean(x)),
        "sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
        "quantiles": {f"{p:g}": float(v) for p, v in zip(QUANTILES, q)},
        "median": float(np.quantile(x, 0.5)),
        "ci95": [float(q[0]), float(q[-1])],
    }


def chain_summaries(chain: Chain) -> dict:
    if len(chain) == 0:
        raise ValueError("cannot summarize an empty chain")
    arr = chain.array()
    return {name: summarize(arr[:, i]) for i, name in enumerate(chain.columns)}
