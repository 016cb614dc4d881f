"""Kennedy-O'Hagan calibration of a univariate-output simulator.

Field data ``y`` and simulator runs ``eta`` are modelled jointly as

    y_n   = eta(x_n, theta) + delta(x_n) + eps_n
    eta_m = eta(x*_m, t*_m)

with independent GP priors on ``eta`` and ``delta``. All designs live on the
unit cube; ``theta`` enters the likelihood through its unit-cube value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .kernels import LAMBDA_BOUNDS, FactorizationError, ProductKernel, chol_jitter, cov_matrix
from .mcmc import (
    AdaptiveProposal,
    Chain,
    ParamBlock,
    Prior,
    Uniform,
    metropolis_accept,
    to_unit,
)

LOG_2PI = math.log(2.0 * math.pi)

SIGMA_ETA_PRIOR = Uniform(0.0, 3.0)
SIGMA_DELTA_PRIOR = Uniform(0.0, 2.0)
SIGMA_EPS_PRIOR = Uniform(0.0, 1.0)
LAMBDA_PRIOR = Uniform(*LAMBDA_BOUNDS)


@dataclass
class CalibrationDataset:
    y: np.ndarray
    X: np.ndarray
    eta: np.ndarray
    Xstar: np.ndarray
    Tstar: np.ndarray
    output_scale: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.eta = np.asarray(self.eta, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float).reshape(self.y.size, -1)
        self.Xstar = np.asarray(self.Xstar, dtype=float).reshape(self.eta.size, -1)
        self.Tstar = np.asarray(self.Tstar, dtype=float).reshape(self.eta.size, -1)
        if self.y.size < 1 or self.eta.size < 1:
            raise ValueError("need at least one field observation and one simulator run")
        if self.X.shape[1] != self.Xstar.shape[1]:
            raise ValueError("field and simulator x-designs have different widths")
        for name in ("X", "Xstar", "Tstar"):
            A = getattr(self, name)
            if np.any(A < 0) or np.any(A > 1):
                raise ValueError(f"{name} has entries outside [0, 1]")

    @property
    def N(self) -> int:
        return self.y.size

    @property
    def M(self) -> int:
        return self.eta.size

    @property
    def dx(self) -> int:
        return self.X.shape[1]

    @property
    def dt(self) -> int:
        return self.Tstar.shape[1]

    @property
    def d(self) -> np.ndarray:
        return np.concatenate([self.y, self.eta])

    def standardized(self) -> "CalibrationDataset":
        """Divide ``y`` and ``eta`` by the sample SD of their concatenation."""
        s = float(np.std(self.d, ddof=1)) if self.d.size > 1 else 1.0
        if not s > 0:
            s = 1.0
        return replace(self, y=self.y / s, eta=self.eta / s, output_scale=self.output_scale * s)


@dataclass
class EtaDeltaParams:
    mu_eta: float
    mu_delta: float
    sigma2_eta: float
    sigma2_delta: float
    sigma2_eps: float
    lam_eta_x: np.ndarray
    lam_eta_t: np.ndarray
    lam_delta: np.ndarray

    def __post_init__(self):
        self.lam_eta_x = np.atleast_1d(np.asarray(self.lam_eta_x, dtype=float))
        self.lam_eta_t = np.atleast_1d(np.asarray(self.lam_eta_t, dtype=float))
        self.lam_delta = np.atleast_1d(np.asarray(self.lam_delta, dtype=float))

    @classmethod
    def default(cls, dx: int, dt: int) -> "EtaDeltaParams":
        return cls(0.0, 0.0, 1.0, 0.1, 0.01, np.ones(dx), np.ones(dt), np.ones(dx))

    def hyper_vector(self) -> np.ndarray:
        """``(sigma_eta, sigma_delta, sigma_eps, lam_eta_x, lam_eta_t, lam_delta)``."""
        return np.concatenate(
            [
                np.sqrt([self.sigma2_eta, self.sigma2_delta, self.sigma2_eps]),
                self.lam_eta_x,
                self.lam_eta_t,
                self.lam_delta,
            ]
        )

    def with_hyper_vector(self, v) -> "EtaDeltaParams":
        v = np.asarray(v, dtype=float)
        dx, dt = self.lam_eta_x.size, self.lam_eta_t.size
        return EtaDeltaParams(
            self.mu_eta,
            self.mu_delta,
            v[0] ** 2,
            v[1] ** 2,
            v[2] ** 2,
            v[3 : 3 + dx],
            v[3 + dx : 3 + dx + dt],
            v[3 + dx + dt : 3 + 2 * dx + dt],
        )

    def names(self) -> list[str]:
        dx, dt = self.lam_eta_x.size, self.lam_eta_t.size
        return (
            ["mu_eta", "mu_delta", "sigma2_eta", "sigma2_delta", "sigma2_eps"]
            + [f"lam_eta_x{i + 1}" for i in range(dx)]
            + [f"lam_eta_t{i + 1}" for i in range(dt)]
            + [f"lam_delta{i + 1}" for i in range(dx)]
        )

    def values(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.mu_eta, self.mu_delta, self.sigma2_eta, self.sigma2_delta, self.sigma2_eps],
                self.lam_eta_x,
                self.lam_eta_t,
                self.lam_delta,
            ]
        )

    def to_dict(self) -> dict:
        return dict(zip(self.names(), self.values().tolist()))

    @classmethod
    def from_dict(cls, d: dict, dx: int, dt: int) -> "EtaDeltaParams":
        return cls(
            d["mu_eta"],
            d["mu_delta"],
            d["sigma2_eta"],
            d["sigma2_delta"],
            d["sigma2_eps"],
            [d[f"lam_eta_x{i + 1}"] for i in range(dx)],
            [d[f"lam_eta_t{i + 1}"] for i in range(dt)],
            [d[f"lam_delta{i + 1}"] for i in range(dx)],
        )


def hyper_priors(dx: int, dt: int) -> list[Prior]:
    return [SIGMA_ETA_PRIOR, SIGMA_DELTA_PRIOR, SIGMA_EPS_PRIOR] + [LAMBDA_PRIOR] * (2 * dx + dt)


@dataclass(frozen=True)
class Kernels:
    eta: str = "sqexp"
    delta: str = "sqexp"


def joint_cov(data: CalibrationDataset, theta_unit, p: EtaDeltaParams, kernels=Kernels()) -> np.ndarray:
    """Covariance of ``d = (y, eta)`` given unit-cube ``theta`` and hyperparameters."""
    theta_unit = np.atleast_1d(np.asarray(theta_unit, dtype=float))
    if theta_unit.shape != (data.dt,):
        raise ValueError(f"theta must have {data.dt} entries, got {theta_unit.shape}")
    k_eta = ProductKernel(kernels.eta, np.concatenate([p.lam_eta_x, p.lam_eta_t]), p.sigma2_eta)
    k_delta = ProductKernel(kernels.delta, p.lam_delta, p.sigma2_delta)
    field_design = np.hstack([data.X, np.tile(theta_unit, (data.N, 1))])
    sim_design = np.hstack([data.Xstar, data.Tstar])
    N = data.N
    C = np.empty((N + data.M, N + data.M))
    C[:N, :N] = cov_matrix(k_eta, field_design) + cov_matrix(k_delta, data.X)
    C[:N, :N] += p.sigma2_eps * np.eye(N)
    cross = cov_matrix(k_eta, field_design, sim_design)
    C[:N, N:] = cross
    C[N:, :N] = cross.T
    C[N:, N:] = cov_matrix(k_eta, sim_design)
    return C


def mean_vector(data: CalibrationDataset, p: EtaDeltaParams) -> np.ndarray:
    return np.concatenate([np.full(data.N, p.mu_eta + p.mu_delta), np.full(data.M, p.mu_eta)])


def _factor(data, theta_unit, p, kernels):
    try:
        return chol_jitter(joint_cov(data, theta_unit, p, kernels))[0]
    except FactorizationError as exc:
        raise FactorizationError(
            f"joint covariance not factorizable at theta={np.ravel(theta_unit).tolist()}, "
            f"hyperparameters={p.to_dict()}",
            exc.ladder,
        ) from exc


def _gaussian_loglik(L: np.ndarray, resid: np.ndarray) -> float:
    w = solve_triangular(L, resid, lower=True, check_finite=False)
    return -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * resid.size * LOG_2PI


def log_lik(data: CalibrationDataset, theta_unit, p: EtaDeltaParams, kernels=Kernels()) -> float:
    """MVN log density of ``d`` (via Cholesky, no explicit inverse)."""
    L = _factor(data, theta_unit, p, kernels)
    return _gaussian_loglik(L, data.d - mean_vector(data, p))


def _mean_basis(data):
    H = np.zeros((data.N + data.M, 2))
    H[:, 0] = 1.0
    H[: data.N, 1] = 1.0
    return H


def gls_means(data: CalibrationDataset, L: np.ndarray):
    """Mean and covariance of ``(mu_eta, mu_delta)`` given the factor of the covariance."""
    H = _mean_basis(data)
    CiH = cho_solve((L, True), H, check_finite=False)
    prec = H.T @ CiH
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("mean-parameter precision is singular") from exc
    return cov @ (CiH.T @ data.d), 0.5 * (cov + cov.T)


def gibbs_means(data, theta_unit, p, rng, kernels=Kernels(), L=None):
    """Draw ``(mu_eta, mu_delta)`` from their bivariate normal full conditional (flat prior)."""
    if L is None:
        L = _factor(data, theta_unit, p, kernels)
    m, cov = gls_means(data, L)
    draw = m + np.linalg.cholesky(cov) @ rng.standard_normal(2)
    return float(draw[0]), float(draw[1])


@dataclass
class Theta:
    """Calibration parameters in natural units plus their unit-cube image."""

    natural: np.ndarray
    priors: list = field(repr=False)

    @property
    def unit(self) -> np.ndarray:
        return np.array([float(to_unit(v, p)) for v, p in zip(self.natural, self.priors)])


class CalibrationSampler:
    """Metropolis-within-Gibbs over ``(theta, alpha_eta_delta)``.

    Per :meth:`step`: Gibbs draw of the two means, one block Metropolis update
    of ``(sigma_eta, sigma_delta, sigma_eps, lambdas)`` and one Metropolis
    update of ``theta``. Both Metropolis blocks use adaptive Gaussian proposals
    on the probit scale. The factor of the current covariance is cached and
    only refreshed when an accepted move changes it.
    """

    def __init__(
        self,
        data: CalibrationDataset,
        theta_priors,
        rng: np.random.Generator,
        params: EtaDeltaParams | None = None,
        theta0=None,
        kernels: Kernels = Kernels(),
        hyper_proposal: AdaptiveProposal | None = None,
        theta_proposal: AdaptiveProposal | None = None,
    ):
        self.data = data
        self.kernels = kernels
        self.rng = rng
        self.theta_block = ParamBlock(theta_priors)
        if len(self.theta_block) != data.dt:
            raise ValueError(f"need {data.dt} theta priors, got {len(self.theta_block)}")
        self.hyper_block = ParamBlock(hyper_priors(data.dx, data.dt))
        self.params = params if params is not None else EtaDeltaParams.default(data.dx, data.dt)
        if theta0 is None:
            theta0 = [0.5 * (p.a + p.b) for p in theta_priors]
        self.theta_real = self.theta_block.to_real(np.atleast_1d(theta0))
        self.hyper_real = self.hyper_block.to_real(self.params.hyper_vector())
        self.hyper_proposal = hyper_proposal or AdaptiveProposal(len(self.hyper_block), init_scale=0.05)
        self.theta_proposal = theta_proposal or AdaptiveProposal(data.dt, init_scale=0.1)
        self.jitter_events = 0
        self._L = self._factor(self.theta_unit, self.params)

    # state views
    @property
    def theta(self) -> np.ndarray:
        return self.theta_block.from_real(self.theta_real)

    @property
    def theta_unit(self) -> np.ndarray:
        return unit_of(self.theta_real)

    def _factor(self, theta_unit, params):
        L, jit = chol_jitter(joint_cov(self.data, theta_unit, params, self.kernels))
        if jit:
            self.jitter_events += 1
        return L

    def _try_factor(self, theta_unit, params):
        try:
            return self._factor(theta_unit, params)
        except FactorizationError:
            return None

    def _loglik(self, L, params):
        return _gaussian_loglik(L, self.data.d - mean_vector(self.data, params))

    # updates
    def update_means(self) -> None:
        mu_eta, mu_delta = gibbs_means(self.data, None, self.params, self.rng, L=self._L)
        self.params = replace(self.params, mu_eta=mu_eta, mu_delta=mu_delta)

    def update_hyper(self) -> bool:
        prop = self.hyper_proposal
        r_new = prop.propose(self.hyper_real, self.rng)
        lp_new = self.hyper_block.log_density(r_new)
        accepted = False
        if np.isfinite(lp_new):
            p_new = self.params.with_hyper_vector(self.hyper_block.from_real(r_new))
            L_new = self._try_factor(self.theta_unit, p_new)
            if L_new is not None:
                log_r = (
                    self._loglik(L_new, p_new)
                    + lp_new
                    - self._loglik(self._L, self.params)
                    - self.hyper_block.log_density(self.hyper_real)
                )
                accepted = metropolis_accept(log_r, self.rng)
                if accepted:
                    self.hyper_real, self.params, self._L = r_new, p_new, L_new
        prop.tally(accepted)
        prop.update(self.hyper_real)
        return accepted

    def update_theta(self, gate=None) -> tuple[bool, bool | None]:
        """Metropolis step for theta.

        ``gate(theta_unit) -> bool`` is consulted after the proposal is drawn;
        a proposal that fails the gate is rejected outright. Returns
        ``(accepted, gate_result)`` with ``gate_result`` None when no gate ran.
        """
        prop = self.theta_proposal
        r_new = prop.propose(self.theta_real, self.rng)
        lp_new = self.theta_block.log_density(r_new)
        accepted = False
        gate_ok = None
        if np.isfinite(lp_new):
            u_new = unit_of(r_new)
            if gate is not None:
                gate_ok = bool(gate(u_new))
            if gate_ok is not False:
                L_new = self._try_factor(u_new, self.params)
                if L_new is not None:
                    log_r = (
                        self._loglik(L_new, self.params)
                        + lp_new
                        - self._loglik(self._L, self.params)
                        - self.theta_block.log_density(self.theta_real)
                    )
                    accepted = metropolis_accept(log_r, self.rng)
                    if accepted:
                        self.theta_real, self._L = r_new, L_new
        prop.tally(accepted)
        prop.update(self.theta_real)
        return accepted, gate_ok

    def set_theta(self, theta) -> None:
        """Move to ``theta`` (natural units) outside of any Metropolis step."""
        r = self.theta_block.to_real(np.atleast_1d(np.asarray(theta, dtype=float)))
        L = self._factor(unit_of(r), self.params)
        self.theta_real, self._L = r, L

    def step(self, gate=None):
        self.update_means()
        self.update_hyper()
        return self.update_theta(gate)

    def log_posterior(self) -> float:
        return (
            self._loglik(self._L, self.params)
            + self.hyper_block.log_density(self.hyper_real)
            + self.theta_block.log_density(self.theta_real)
        )

    def columns(self) -> list[str]:
        return [f"theta{i + 1}" for i in range(self.data.dt)] + self.params.names()

    def snapshot(self) -> np.ndarray:
        return np.concatenate([self.theta, self.params.values()])

    def freeze(self) -> None:
        self.hyper_proposal.freeze()
        self.theta_proposal.freeze()

    def acceptance(self) -> dict:
        return {"hyper": self.hyper_proposal.acceptance_rate, "theta": self.theta_proposal.acceptance_rate}

    def export_state(self) -> dict:
        return {
            "kind": "calibration",
            "theta": self.theta.tolist(),
            "params": self.params.to_dict(),
            "hyper_proposal": self.hyper_proposal.to_dict(),
            "theta_proposal": self.theta_proposal.to_dict(),
        }


def unit_of(theta_real) -> np.ndarray:
    # ndtr of the probit value is exactly the unit-cube coordinate
    return ndtr(np.asarray(theta_real, dtype=float))


def metropolis_etadelta(sampler: CalibrationSampler) -> bool:
    return sampler.update_hyper()


def metropolis_theta(sampler: CalibrationSampler) -> bool:
    return sampler.update_theta()[0]


@dataclass
class CalibrationRun:
    chain: Chain
    acceptance: dict
    sampler: CalibrationSampler


def run_calibration_mcmc(
    data: CalibrationDataset,
    theta_priors,
    rng: np.random.Generator,
    iterations: int,
    burnin: int = 0,
    thin: int = 1,
    kernels: Kernels = Kernels(),
    params: EtaDeltaParams | None = None,
    theta0=None,
    hyper_proposal: AdaptiveProposal | None = None,
    theta_proposal: AdaptiveProposal | None = None,
    freeze_after_burnin: bool = False,
) -> CalibrationRun:
    """Plain calibration that ignores failed runs."""
    sampler = CalibrationSampler(
        data, theta_priors, rng, params, theta0, kernels, hyper_proposal, theta_proposal
    )
    chain = Chain(sampler.columns(), iterations, burnin if iterations else 0, thin)
    for t in range(1, iterations + 1):
        sampler.step()
        if chain.wants(t):
            chain.record(sampler.snapshot())
        if freeze_after_burnin and t == burnin:
            sampler.freeze()
    acc = {
        "hyper": sampler.hyper_proposal.acceptance_rate,
        "theta": sampler.theta_proposal.acceptance_rate,
    }
    return CalibrationRun(chain, acc, sampler)
