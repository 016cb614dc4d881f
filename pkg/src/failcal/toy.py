"""Synthetic one-x, one-t calibration problem with a band of failed runs.

The "simulator" is a single realization of a zero-mean GP on [0, 1]^2 with a
squared-exponential kernel, observed on an 18 x 8 grid. Field data are taken
at the 18 grid x-values with ``t = theta_true`` plus a quadratic discrepancy
and Gaussian noise. Failed runs form two contiguous blobs, one in the
low-x/low-t corner and one in the high-x/high-t corner; ``fail_low[k]`` is the
number of failing x-values (counted from x = 0) in t-column ``k`` and
``fail_high[k]`` the number (counted from x = 1) in t-column ``nt - 1 - k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import ProductKernel, chol_jitter, cov_matrix
from .koh import CalibrationDataset
from .latent import FailureDataset


@dataclass(frozen=True)
class ToySpec:
    nx: int = 18
    nt: int = 8
    theta_true: float = 0.4
    sigma2_eta: float = 10.0
    lam_eta_x: float = 1.0
    lam_eta_t: float = 2.0
    sigma2_eps: float = 0.002
    fail_low: tuple = (8, 7)
    fail_high: tuple = (8, 7)
    failures: bool = True
    seed: int = 1

    @property
    def n_failures(self) -> int:
        return (sum(self.fail_low) + sum(self.fail_high)) if self.failures else 0


def discrepancy(x):
    x = np.asarray(x, dtype=float)
    return 0.1 * (x - 0.2) ** 2 - 0.5 * (x - 0.2)


@dataclass
class ToyTruth:
    theta_true: float
    band: tuple
    failed: np.ndarray
    eta_field: np.ndarray
    grid_x: np.ndarray
    grid_t: np.ndarray
    jitter: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_true": self.theta_true,
            "band": list(self.band),
            "n_failed": int(self.failed.sum()),
            "jitter": self.jitter,
        }


def failure_mask(spec: ToySpec) -> np.ndarray:
    """Boolean (nx, nt) array of failed grid points."""
    mask = np.zeros((spec.nx, spec.nt), dtype=bool)
    if not spec.failures:
        return mask
    for k, n in enumerate(spec.fail_low):
        mask[:n, k] = True
    for k, n in enumerate(spec.fail_high):
        if n:
            mask[spec.nx - n :, spec.nt - 1 - k] = True
    return mask


def success_band(mask: np.ndarray, grid_t: np.ndarray) -> tuple:
    """Lowest and highest t-columns of the contiguous all-success middle band."""
    ok = ~mask.any(axis=0)
    if not ok.any():
        return (float("nan"), float("nan"))
    cols = np.flatnonzero(ok)
    half = len(ok) / 2
    low_fail = [k for k in range(len(ok)) if not ok[k] and k < half]
    high_fail = [k for k in range(len(ok)) if not ok[k] and k >= half]
    first = (max(low_fail) + 1) if low_fail else cols[0]
    last = (min(high_fail) - 1) if high_fail else cols[-1]
    return (float(grid_t[first]), float(grid_t[last]))


def generate_toy(spec: ToySpec = ToySpec(), rng: np.random.Generator | None = None):
    """Return ``(CalibrationDataset, FailureDataset, ToyTruth)`` in natural output units."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    gx = np.linspace(0.0, 1.0, spec.nx)
    gt = np.linspace(0.0, 1.0, spec.nt)
    # x-major grid order: row i*nt + j is (gx[i], gt[j])
    grid = np.array([(x, t) for x in gx for t in gt])
    field_pts = np.column_stack([gx, np.full(spec.nx, spec.theta_true)])
    k = ProductKernel("sqexp", [spec.lam_eta_x, spec.lam_eta_t], spec.sigma2_eta)
    pts = np.vstack([grid, field_pts])
    L, jit = chol_jitter(cov_matrix(k, pts))
    surface = L @ rng.standard_normal(pts.shape[0])
    eta_grid, eta_field = surface[: grid.shape[0]], surface[grid.shape[0] :]
    y = eta_field + discrepancy(gx) + np.sqrt(spec.sigma2_eps) * rng.standard_normal(spec.nx)

    failed = failure_mask(spec).ravel()
    ok = ~failed
    cal = CalibrationDataset(
        y=y,
        X=gx.reshape(-1, 1),
        eta=eta_grid[ok],
        Xstar=grid[ok, :1],
        Tstar=grid[ok, 1:],
    )
    fail = FailureDataset(z=ok.astype(int), design=grid, dx=1)
    truth = ToyTruth(
        theta_true=spec.theta_true,
        band=success_band(failure_mask(spec), gt),
        failed=failed,
        eta_field=eta_field,
        grid_x=gx,
        grid_t=gt,
        jitter=jit,
    )
    return cal, fail, truth
