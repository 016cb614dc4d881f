"""Correlation functions, product kernels and guarded Cholesky factorization.

All inputs are assumed to be pre-scaled to the unit cube, so lengthscales are
unitless. Two one-dimensional families are available:

* ``"sqexp"``  : ``R(l) = exp(-(l / lam)**2)``
* ``"matern32"``: ``R(l) = (1 + sqrt(6)|l|/lam) * exp(-sqrt(6)|l|/lam)``

The Matern form uses the sqrt(6) scaling so that ``lam`` has the same rough
meaning for both families (``lam > 1`` means a very smooth process).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT6 = math.sqrt(6.0)
FAMILIES = ("sqexp", "matern32")

LAMBDA_BOUNDS = (0.1, 5.0)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance matrix stays indefinite over the whole jitter ladder."""

    def __init__(self, message, ladder=()):
        super().__init__(message)
        self.ladder = tuple(ladder)


def _check_family(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown correlation family {family!r}; expected one of {FAMILIES}")


def _corr_array(family, dist, lam):
    # dist is |l| already
    if family == "sqexp":
        r = dist / lam
        return np.exp(-(r * r))
    r = SQRT6 * dist / lam
    return (1.0 + r) * np.exp(-r)


@dataclass(frozen=True)
class CorrelationSpec:
    family: str = "sqexp"
    lengthscale: float = 1.0

    def __post_init__(self):
        _check_family(self.family)
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive and finite, got {self.lengthscale}")


def corr(spec: CorrelationSpec, l: float) -> float:
    """Evaluate the one-dimensional correlation ``R(|l|; lambda)``."""
    if not np.isfinite(l):
        raise ValueError(f"distance must be finite, got {l}")
    return float(_corr_array(spec.family, np.abs(np.float64(l)), spec.lengthscale))


@dataclass(frozen=True)
class ProductKernel:
    """``scale * prod_d R(|a_d - b_d|; lam_d)`` with a single family for all dimensions."""

    family: str
    lengthscales: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        _check_family(self.family)
        lam = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("lengthscales must be a non-empty vector")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError(f"lengthscales must be positive, got {lam}")
        if not (np.isfinite(self.scale) and self.scale >= 0):
            raise ValueError(f"scale must be nonnegative, got {self.scale}")
        object.__setattr__(self, "lengthscales", lam)

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @property
    def specs(self) -> list[CorrelationSpec]:
        return [CorrelationSpec(self.family, float(l)) for l in self.lengthscales]


def _as_design(A, dim):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1) if dim > 1 or A.size == 1 else A.reshape(-1, 1)
    if A.ndim != 2 or A.shape[1] != dim:
        raise ValueError(f"design has shape {A.shape}, kernel expects {dim} columns")
    return A


def cov_matrix(k: ProductKernel, A, B=None) -> np.ndarray:
    """Covariance block with entries ``kernel_eval(k, A[i], B[j])``.

    When ``B`` is omitted the square matrix ``k(A, A)`` is returned; it is
    symmetric by construction since every factor depends on ``|a - b|``.
    """
    A = _as_design(A, k.dim)
    B = A if B is None else _as_design(B, k.dim)
    out = np.ones((A.shape[0], B.shape[0]))
    for d in range(k.dim):
        dist = np.abs(A[:, d, None] - B[None, :, d])
        out *= _corr_array(k.family, dist, k.lengthscales[d])
    out *= k.scale
    return out


def kernel_eval(k: ProductKernel, p1, p2) -> float:
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    p2 = np.atleast_1d(np.asarray(p2, dtype=float))
    if p1.shape != (k.dim,) or p2.shape != (k.dim,):
        raise ValueError(f"points must have dimension {k.dim}, got {p1.shape} and {p2.shape}")
    return float(cov_matrix(k, p1[None, :], p2[None, :])[0, 0])


@dataclass
class CovMatrix:
    entries: np.ndarray
    jitter_applied: float = 0.0
    ladder: list = field(default_factory=list)


def jitter_ladder(scale: float, lo: float = 1e-8, hi: float = 1e-4) -> list[float]:
    """Zero first, then ``lo*scale`` growing by 10x up to ``hi*scale``."""
    steps = [0.0]
    j = lo
    while j <= hi * (1 + 1e-9):
        steps.append(j * scale)
        j *= 10.0
    return steps


def chol_jitter(C, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``C + jitter * I``.

    The first attempt uses no jitter. On failure the nugget climbs the ladder
    ``1e-8 .. 1e-4`` times ``scale`` (default: mean of the diagonal).

    Returns
    -------
    L, jitter
        ``L @ L.T == C + jitter * I`` up to rounding.
    """
    C = np.asarray(C.entries if isinstance(C, CovMatrix) else C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {C.shape}")
    if scale is None:
        scale = float(np.mean(np.diag(C))) if C.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    ladder = jitter_ladder(scale)
    eye = np.eye(C.shape[0])
    for jit in ladder:
        try:
            L = np.linalg.cholesky(C + jit * eye if jit else C)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jit
    raise FactorizationError(
        f"matrix not positive definite after jitter ladder {ladder}", ladder=ladder
    )


def factor(C: CovMatrix, scale: float | None = None) -> np.ndarray:
    """Factor a :class:`CovMatrix` in place, recording the jitter used."""
    L, jit = chol_jitter(C.entries, scale)
    C.jitter_applied = jit
    return L


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))

