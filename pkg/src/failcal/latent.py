"""Clipped Gaussian-process classifier for simulator success/failure.

A run succeeds (``z = 1``) exactly when a latent GP ``zeta`` is positive at its
input. ``zeta`` has constant mean ``mu_zeta``, unit variance and a product
correlation kernel. Posterior sampling alternates a Gibbs draw of ``mu_zeta``,
a Metropolis update of the lengthscales and a sequential sweep of univariate
truncated-normal draws written in precision form, so the latent covariance is
inverted once per lengthscale value.

Two kernel modes are supported: ``"c1"`` ignores the variable inputs ``x``
(the kernel acts on the ``t`` columns only) and ``"c2"`` uses all columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtri

from .kernels import LAMBDA_BOUNDS, FactorizationError, ProductKernel, chol_jitter, cov_matrix
from .mcmc import AdaptiveProposal, Chain, ParamBlock, Uniform, metropolis_accept

LOG_2PI = math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)
MODES = ("c1", "c2")
# Below this region mass the inverse-CDF draw loses accuracy; use rejection.
TAIL_MASS = 1e-10
TAIL_CUT = -float(ndtri(TAIL_MASS))


@dataclass
class FailureDataset:
    """Binary outcomes ``z`` over the run design ``[X*_0, T*_0]``.

    Rows are reordered successes-first on construction (stable within each
    group); ``order`` maps canonical rows back to input rows.
    """

    z: np.ndarray
    design: np.ndarray
    dx: int
    order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z).ravel()
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("z must be binary")
        design = np.asarray(self.design, dtype=float).reshape(z.size, -1)
        if not 0 <= self.dx <= design.shape[1]:
            raise ValueError("dx larger than design width")
        if np.any(design < 0) or np.any(design > 1):
            raise ValueError("design entries must lie in [0, 1]")
        order = np.argsort(-z, kind="stable")
        self.z = z[order].astype(np.int8)
        self.design = design[order]
        self.order = order

    @property
    def M_tot(self) -> int:
        return self.z.size

    @property
    def M(self) -> int:
        return int(self.z.sum())

    @property
    def M0(self) -> int:
        return self.M_tot - self.M

    @property
    def dt(self) -> int:
        return self.design.shape[1] - self.dx

    def require_both(self) -> None:
        if self.M == 0 or self.M0 == 0:
            raise ValueError("need at least one success and one failure")

    def kernel_design(self, mode: str) -> np.ndarray:
        return self.design if mode == "c2" else self.design[:, self.dx :]


@dataclass
class LatentState:
    zeta: np.ndarray
    mu: float
    lam: np.ndarray

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=float).copy()
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float)).copy()

    @classmethod
    def initial(cls, data: FailureDataset, mode: str = "c2", lam: float = 0.5) -> "LatentState":
        n_lam = data.design.shape[1] if mode == "c2" else data.dt
        return cls(np.where(data.z == 1, 0.5, -0.5), 0.0, np.full(n_lam, lam))

    def copy(self) -> "LatentState":
        return LatentState(self.zeta, self.mu, self.lam)


def latent_kernel(state_or_lam, family: str = "matern32") -> ProductKernel:
    lam = state_or_lam.lam if isinstance(state_or_lam, LatentState) else state_or_lam
    return ProductKernel(family, lam, 1.0)


def sign_ok(zeta, z) -> bool:
    return bool(np.all((zeta > 0) == (z == 1)))


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _lam_log_prior(lam) -> float:
    lo, hi = LAMBDA_BOUNDS
    if np.any(lam < lo) or np.any(lam > hi):
        return -np.inf
    return -lam.size * math.log(hi - lo)


def _mvn_logpdf_chol(L, resid) -> float:
    w = solve_triangular(L, resid, lower=True, check_finite=False)
    return -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * resid.size * LOG_2PI


def latent_log_posterior(state: LatentState, data: FailureDataset, mode: str = "c2", family: str = "matern32") -> float:
    """Unnormalized log posterior of ``(zeta, mu_zeta, lambda_zeta)``.

    Returns ``-inf`` when the sign pattern contradicts ``z`` or a lengthscale
    leaves ``[0.1, 5]``; the flat prior on ``mu_zeta`` contributes nothing.
    """
    _check_mode(mode)
    if not sign_ok(state.zeta, data.z):
        return -np.inf
    lp = _lam_log_prior(state.lam)
    if not np.isfinite(lp):
        return -np.inf
    D = data.kernel_design(mode)
    L, _ = chol_jitter(cov_matrix(latent_kernel(state, family), D))
    return _mvn_logpdf_chol(L, state.zeta - state.mu) + lp


# -- truncated normal -------------------------------------------------------


def _std_tail_draw(a: float, u: float, rng) -> float:
    """Standard normal conditioned on ``Y >= a``, using uniform ``u`` in (0, 1]."""
    if a < TAIL_CUT:
        y = -float(ndtri(u * 0.5 * math.erfc(a / SQRT2)))
        return max(y, a)
    # exponential rejection sampler of Robert (1995)
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        y = a - math.log(1.0 - rng.random()) / alpha
        if rng.random() <= math.exp(-0.5 * (y - alpha) ** 2):
            return y


def trunc_normal_draw(mean: float, var: float, positive: bool, rng: np.random.Generator) -> float:
    """Exact draw from ``N(mean, var)`` restricted to ``(0, inf)`` or ``(-inf, 0]``."""
    if not var > 0:
        raise ValueError(f"variance must be positive, got {var}")
    s = math.sqrt(var)
    return _tn(mean, s, positive, 1.0 - rng.random(), rng)


def _tn(m, s, positive, u, rng):
    if positive:
        x = m + s * _std_tail_draw(-m / s, u, rng)
        return x if x > 0 else np.nextafter(0.0, 1.0)
    x = m - s * _std_tail_draw(m / s, u, rng)
    return min(x, 0.0)


# -- Gibbs pieces -----------------------------------------------------------


def precision(L: np.ndarray) -> np.ndarray:
    Q = cho_solve((L, True), np.eye(L.shape[0]), check_finite=False)
    return 0.5 * (Q + Q.T)


def gibbs_sweep_latent(zeta: np.ndarray, mu: float, Q: np.ndarray, z, rng) -> np.ndarray:
    """One in-place sequential sweep ``i = 0..n-1`` of truncated full conditionals.

    The conditional of ``zeta_i`` is ``N(zeta_i - r_i / q_ii, 1 / q_ii)`` with
    ``r = Q (zeta - mu)``; ``r`` is updated incrementally after each draw.
    """
    n = zeta.size
    qd = np.diag(Q)
    if np.any(qd <= 0):
        raise FactorizationError("precision matrix has a non-positive diagonal")
    r = Q @ (zeta - mu)
    u = 1.0 - rng.random(n)
    pos = np.asarray(z) == 1
    for i in range(n):
        q = qd[i]
        old = zeta[i]
        new = _tn(old - r[i] / q, 1.0 / math.sqrt(q), pos[i], u[i], rng)
        if new != old:
            r += Q[:, i] * (new - old)
            zeta[i] = new
    return zeta


def gibbs_mu_zeta(zeta: np.ndarray, Q: np.ndarray, rng) -> float:
    """Draw ``mu_zeta`` from ``N(1'Q zeta / 1'Q 1, 1 / 1'Q 1)`` (flat prior)."""
    q1 = Q.sum(axis=0)
    a = float(q1.sum())
    return float(q1 @ zeta) / a + rng.standard_normal() / math.sqrt(a)


def loocv_draws(zeta, mu, Q, rng) -> np.ndarray:
    """Untruncated leave-one-out conditional draws of every latent value."""
    qd = np.diag(Q)
    r = Q @ (zeta - mu)
    return zeta - r / qd + rng.standard_normal(zeta.size) / np.sqrt(qd)


def loocv_rate(zeta, mu, Q, z, rng) -> float:
    pred = loocv_draws(zeta, mu, Q, rng) > 0
    return float(np.mean(pred == (np.asarray(z) == 1)))


# -- prediction -------------------------------------------------------------


def predictive_moments(state: LatentState, design: np.ndarray, new: np.ndarray, family="matern32", L=None):
    """Mean and covariance of ``zeta`` at ``new`` given the latent values at ``design``."""
    k = latent_kernel(state, family)
    if L is None:
        L, _ = chol_jitter(cov_matrix(k, design))
    V = solve_triangular(L, cov_matrix(k, design, new), lower=True, check_finite=False)
    w = solve_triangular(L, state.zeta - state.mu, lower=True, check_finite=False)
    mean = state.mu + V.T @ w
    cov = cov_matrix(k, new) - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def draw_mvn(mean, cov, rng) -> np.ndarray:
    # jitter is relative to the unit prior variance, not to the (possibly ~0) conditional one
    Lc, _ = chol_jitter(cov, scale=1.0)
    return mean + Lc @ rng.standard_normal(mean.size)


def predictive_draw(state: LatentState, data: FailureDataset, new, rng, mode="c2", family="matern32", L=None):
    """One draw of the latent process at the rows of ``new``; labels are ``draw > 0``."""
    _check_mode(mode)
    new = np.asarray(new, dtype=float)
    D = data.kernel_design(mode)
    new = new.reshape(-1, D.shape[1])
    mean, cov = predictive_moments(state, D, new, family, L)
    return draw_mvn(mean, cov, rng)


# -- sampler ----------------------------------------------------------------


class LatentSampler:
    """Metropolis-within-Gibbs sampler for the clipped-GP classifier."""

    def __init__(
        self,
        data: FailureDataset,
        rng: np.random.Generator,
        mode: str = "c2",
        family: str = "matern32",
        state: LatentState | None = None,
        proposal: AdaptiveProposal | None = None,
    ):
        _check_mode(mode)
        data.require_both()
        self.data = data
        self.rng = rng
        self.mode = mode
        self.family = family
        self.design = data.kernel_design(mode)
        self.state = state.copy() if state is not None else LatentState.initial(data, mode)
        if self.state.zeta.size != data.M_tot:
            raise ValueError("latent state does not match the failure dataset")
        if not sign_ok(self.state.zeta, data.z):
            raise ValueError("initial latent values contradict z")
        self.lam_block = ParamBlock([Uniform(*LAMBDA_BOUNDS)] * self.state.lam.size)
        self.lam_real = self.lam_block.to_real(self.state.lam)
        self.proposal = proposal or AdaptiveProposal(self.state.lam.size, init_scale=0.1)
        self.jitter_events = 0
        self._set_factor(self._factor(self.state.lam))

    def _factor(self, lam):
        L, jit = chol_jitter(cov_matrix(latent_kernel(lam, self.family), self.design))
        if jit:
            self.jitter_events += 1
        return L

    def _set_factor(self, L):
        self.L = L
        self.Q = precision(L)

    def update_mu(self) -> None:
        self.state.mu = gibbs_mu_zeta(self.state.zeta, self.Q, self.rng)

    def update_lambda(self) -> bool:
        prop = self.proposal
        r_new = prop.propose(self.lam_real, self.rng)
        lp_new = self.lam_block.log_density(r_new)
        accepted = False
        if np.isfinite(lp_new):
            lam_new = self.lam_block.from_real(r_new)
            try:
                L_new = self._factor(lam_new)
            except FactorizationError:
                L_new = None
            if L_new is not None:
                resid = self.state.zeta - self.state.mu
                log_r = (
                    _mvn_logpdf_chol(L_new, resid)
                    + lp_new
                    - _mvn_logpdf_chol(self.L, resid)
                    - self.lam_block.log_density(self.lam_real)
                )
                accepted = metropolis_accept(log_r, self.rng)
                if accepted:
                    self.lam_real = r_new
                    self.state.lam = lam_new
                    self._set_factor(L_new)
        prop.tally(accepted)
        prop.update(self.lam_real)
        return accepted

    def sweep(self) -> None:
        gibbs_sweep_latent(self.state.zeta, self.state.mu, self.Q, self.data.z, self.rng)

    def step(self) -> None:
        self.update_mu()
        self.update_lambda()
        self.sweep()

    def freeze(self) -> None:
        self.proposal.freeze()

    def acceptance(self) -> dict:
        return {"lambda_zeta": self.proposal.acceptance_rate}

    def loocv(self) -> float:
        return loocv_rate(self.state.zeta, self.state.mu, self.Q, self.data.z, self.rng)

    def predict(self, new, rng=None) -> np.ndarray:
        return predictive_draw(
            self.state, self.data, new, rng if rng is not None else self.rng, self.mode, self.family, self.L
        )

    def log_posterior(self) -> float:
        if not sign_ok(self.state.zeta, self.data.z):
            return -np.inf
        return _mvn_logpdf_chol(self.L, self.state.zeta - self.state.mu) + _lam_log_prior(self.state.lam)

    def columns(self) -> list[str]:
        return (
            ["mu_zeta"]
            + [f"lam_zeta{i + 1}" for i in range(self.state.lam.size)]
            + [f"zeta{i + 1}" for i in range(self.data.M_tot)]
        )

    def snapshot(self) -> np.ndarray:
        return np.concatenate([[self.state.mu], self.state.lam, self.state.zeta])

    def export_state(self) -> dict:
        return {
            "kind": "classifier",
            "mode": self.mode,
            "family": self.family,
            "mu_zeta": self.state.mu,
            "lam_zeta": self.state.lam.tolist(),
            "zeta": self.state.zeta.tolist(),
            "proposal": self.proposal.to_dict(),
        }


def state_from_row(row, n_lam: int) -> LatentState:
    """Rebuild a :class:`LatentState` from a recorded classifier chain row."""
    row = np.asarray(row, dtype=float)
    return LatentState(row[1 + n_lam :], float(row[0]), row[1 : 1 + n_lam])


@dataclass
class ClassifierRun:
    chain: Chain
    loocv: np.ndarray
    acceptance: float
    sampler: LatentSampler
    predictions: list = field(default_factory=list)


def run_classifier_mcmc(
    data: FailureDataset,
    rng: np.random.Generator,
    iterations: int,
    burnin: int = 0,
    thin: int = 1,
    loocv_every: int = 0,
    mode: str = "c2",
    family: str = "matern32",
    state: LatentState | None = None,
    proposal: AdaptiveProposal | None = None,
    freeze_after_burnin: bool = False,
    predict_design=None,
    predict_every: int = 0,
) -> ClassifierRun:
    """Run the classifier sampler.

    ``loocv`` is an array of ``(iteration, rate)`` rows, one every
    ``loocv_every`` iterations (0 disables). With ``predict_design`` set, a
    predictive draw at its rows is stored every ``predict_every`` iterations.
    """
    sampler = LatentSampler(data, rng, mode, family, state, proposal)
    chain = Chain(sampler.columns(), iterations, burnin if iterations else 0, thin)
    loocv = []
    preds = []
    for t in range(1, iterations + 1):
        sampler.step()
        if loocv_every and t % loocv_every == 0:
            loocv.append((t, sampler.loocv()))
        if predict_design is not None and predict_every and t % predict_every == 0:
            preds.append(sampler.predict(predict_design))
        if chain.wants(t):
            chain.record(sampler.snapshot())
        if freeze_after_burnin and t == burnin:
            sampler.proposal.freeze()
    return ClassifierRun(
        chain,
        np.asarray(loocv, dtype=float).reshape(-1, 2),
        sampler.proposal.acceptance_rate,
        sampler,
        preds,
    )
