"""Calibration coupled to the failure classifier through a selection-model prior.

The prior on ``theta`` is restricted to the admissible set of a posterior
predictive draw of the latent classifier along the slice ``t = theta``. Each
coupled iteration updates the classifier, then the emulator/discrepancy
hyperparameters, then ``theta`` with a Metropolis step whose proposal must
first pass the admissibility gate.

Also here: the B-matrix of binary admissibility predictions (latent draws x
unconstrained ``theta`` draws) and its row/column summaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .design import equispaced, maximin_lhs
from .kernels import chol_jitter, cov_matrix
from .koh import CalibrationDataset, CalibrationSampler, EtaDeltaParams, Kernels
from .latent import FailureDataset, LatentSampler, LatentState, draw_mvn, latent_kernel
from .mcmc import BMATRIX, CALIBRATION, GATE, INIT, LATENT, AdaptiveProposal, Chain, from_unit, stream

WEIGHT_TOL = 1e-12


@dataclass
class AdmissibilityConfig:
    """How admissibility of ``theta`` is judged from one latent draw.

    ``c1``: the draw is a single value at ``theta``. ``c2``: the draw covers
    the rows ``[xtilde, theta]`` and ``theta`` is admissible when the weighted
    fraction of positive values is at least ``1 - p_tol``.
    """

    mode: str = "c2"
    xtilde: np.ndarray | None = None
    weights: np.ndarray | None = None
    p_tol: float = 0.0

    def __post_init__(self):
        if self.mode not in ("c1", "c2"):
            raise ValueError(f"mode must be 'c1' or 'c2', got {self.mode!r}")
        if not 0.0 <= self.p_tol <= 1.0:
            raise ValueError("p_tol must lie in [0, 1]")
        if self.mode == "c2":
            if self.xtilde is None or len(self.xtilde) == 0:
                raise ValueError("c2 admissibility needs a non-empty xtilde design")
            self.xtilde = np.asarray(self.xtilde, dtype=float)
            if self.xtilde.ndim == 1:
                self.xtilde = self.xtilde.reshape(-1, 1)
            n = self.xtilde.shape[0]
        else:
            self.xtilde = None
            n = 1
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != n:
            raise ValueError(f"{self.weights.size} weights for {n} slice points")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return self.weights.size

    def slice_design(self, theta_unit) -> np.ndarray:
        theta_unit = np.atleast_1d(np.asarray(theta_unit, dtype=float))
        if self.mode == "c1":
            return theta_unit.reshape(1, -1)
        return np.hstack([self.xtilde, np.tile(theta_unit, (self.xtilde.shape[0], 1))])


def make_admissibility(mode: str, dx: int, size: int = 50, kind: str = "grid", p_tol: float = 0.0, rng=None):
    """Build a config with an equispaced (``grid``) or maximin LHS (``lhs``) ``xtilde``."""
    if mode == "c1":
        return AdmissibilityConfig("c1", p_tol=p_tol)
    if kind == "grid":
        X = equispaced(size, dx)
    elif kind == "lhs":
        X = maximin_lhs(size, dx, rng if rng is not None else np.random.default_rng(0))
    else:
        raise ValueError(f"unknown xtilde kind {kind!r}")
    return AdmissibilityConfig("c2", X, p_tol=p_tol)


def admissible(zeta_tilde, cfg: AdmissibilityConfig) -> bool:
    zeta_tilde = np.atleast_1d(np.asarray(zeta_tilde, dtype=float))
    if zeta_tilde.size != cfg.size:
        raise ValueError(f"latent draw has {zeta_tilde.size} values, config expects {cfg.size}")
    frac = float(cfg.weights @ (zeta_tilde > 0))
    return frac >= 1.0 - cfg.p_tol - WEIGHT_TOL


class Gate:
    """Admissibility check of a proposed ``theta`` against the current classifier state.

    Every call makes one fresh predictive draw (from its own RNG stream) and
    discards it after the decision.
    """

    def __init__(self, latent: LatentSampler, cfg: AdmissibilityConfig, rng: np.random.Generator):
        if latent.mode != cfg.mode:
            raise ValueError(f"classifier mode {latent.mode} != admissibility mode {cfg.mode}")
        self.latent = latent
        self.cfg = cfg
        self.rng = rng
        self.calls = 0
        self.passed = 0

    def draw(self, theta_unit) -> np.ndarray:
        return self.latent.predict(self.cfg.slice_design(theta_unit), self.rng)

    def __call__(self, theta_unit) -> bool:
        ok = admissible(self.draw(theta_unit), self.cfg)
        self.calls += 1
        self.passed += ok
        return ok


def metropolis_theta_gated(calibration: CalibrationSampler, gate: Gate) -> tuple[bool, bool | None]:
    return calibration.update_theta(gate)


class CoupledSampler:
    """One chain of the coupled sampler with independent streams per component."""

    def __init__(
        self,
        cal_data: CalibrationDataset,
        fail_data: FailureDataset,
        theta_priors,
        cfg: AdmissibilityConfig,
        seed: int,
        chain_id: int = 0,
        kernels: Kernels = Kernels(),
        latent_family: str = "matern32",
        params: EtaDeltaParams | None = None,
        theta0=None,
        hyper_proposal: AdaptiveProposal | None = None,
        theta_proposal: AdaptiveProposal | None = None,
        latent_state: LatentState | None = None,
        latent_proposal: AdaptiveProposal | None = None,
        init_tries: int = 200,
    ):
        if fail_data.dx != cal_data.dx or fail_data.dt != cal_data.dt:
            raise ValueError("calibration and failure data disagree on (Dx, Dt)")
        self.cfg = cfg
        self.latent = LatentSampler(
            fail_data, stream(seed, chain_id, LATENT), cfg.mode, latent_family, latent_state, latent_proposal
        )
        self.calibration = CalibrationSampler(
            cal_data,
            theta_priors,
            stream(seed, chain_id, CALIBRATION),
            params,
            theta0,
            kernels,
            hyper_proposal,
            theta_proposal,
        )
        self.gate = Gate(self.latent, cfg, stream(seed, chain_id, GATE))
        # whether the theta currently held passed a gate check when it was adopted
        self.admitted = self.gate(self.calibration.theta_unit)
        if not self.admitted:
            self._find_admissible_start(stream(seed, chain_id, INIT), init_tries)

    def _find_admissible_start(self, rng, tries: int) -> None:
        # a gated random walk cannot leave an inadmissible region, so restart from a prior draw
        priors = self.calibration.theta_block.priors
        for _ in range(tries):
            u = rng.uniform(size=len(priors))
            if np.any(u <= 0.0):
                continue
            if self.gate(u):
                self.calibration.set_theta([from_unit(ui, p) for ui, p in zip(u, priors)])
                self.admitted = True
                return

    def step(self) -> bool:
        self.latent.step()
        self.calibration.update_means()
        self.calibration.update_hyper()
        accepted, _ = self.calibration.update_theta(self.gate)
        if accepted:
            self.admitted = True
        return accepted

    def columns(self) -> list[str]:
        return (
            self.calibration.columns()
            + ["mu_zeta"]
            + [f"lam_zeta{i + 1}" for i in range(self.latent.state.lam.size)]
            + ["admitted"]
        )

    def snapshot(self) -> np.ndarray:
        return np.concatenate(
            [
                self.calibration.snapshot(),
                [self.latent.state.mu],
                self.latent.state.lam,
                [float(self.admitted)],
            ]
        )

    def freeze(self) -> None:
        self.calibration.freeze()
        self.latent.proposal.freeze()

    def export_state(self) -> dict:
        return {
            "kind": "coupled",
            "calibration": self.calibration.export_state(),
            "classifier": self.latent.export_state(),
        }

    @property
    def jitter_events(self) -> int:
        return self.calibration.jitter_events + self.latent.jitter_events

    def acceptance(self) -> dict:
        return {
            "theta": self.calibration.theta_proposal.acceptance_rate,
            "hyper": self.calibration.hyper_proposal.acceptance_rate,
            "lambda_zeta": self.latent.proposal.acceptance_rate,
            "gate_pass": self.gate.passed / self.gate.calls if self.gate.calls else float("nan"),
        }


@dataclass
class CoupledRun:
    chain: Chain
    acceptance: dict
    sampler: CoupledSampler


def run_coupled_mcmc(
    cal_data: CalibrationDataset,
    fail_data: FailureDataset,
    theta_priors,
    cfg: AdmissibilityConfig,
    iterations: int,
    burnin: int = 0,
    thin: int = 1,
    seed: int = 0,
    chain_id: int = 0,
    freeze_after_burnin: bool = False,
    **kwargs,
) -> CoupledRun:
    """Run the coupled sampler; ``kwargs`` carry kernels and warm-start states."""
    sampler = CoupledSampler(cal_data, fail_data, theta_priors, cfg, seed, chain_id, **kwargs)
    chain = Chain(sampler.columns(), iterations, burnin if iterations else 0, thin)
    run_chain(sampler, chain, iterations, freeze_at=burnin if freeze_after_burnin else None)
    return CoupledRun(chain, sampler.acceptance(), sampler)


class ChainAborted(RuntimeError):
    """A chain stopped early; ``chain`` holds the rows recorded before iteration ``iteration``."""

    def __init__(self, message, chain: Chain, iteration: int, sampler):
        super().__init__(message)
        self.chain = chain
        self.iteration = iteration
        self.sampler = sampler


def run_chain(
    sampler, chain: Chain, iterations: int, start: int = 1, freeze_at: int | None = None, callback=None
) -> Chain:
    """Drive ``sampler.step()`` for iterations ``start..iterations`` recording into ``chain``.

    ``callback(t)`` runs after each step, before recording.
    """
    t = start
    try:
        for t in range(start, iterations + 1):
            sampler.step()
            if callback is not None:
                callback(t)
            if chain.wants(t):
                chain.record(sampler.snapshot())
            if freeze_at is not None and t == freeze_at:
                sampler.freeze()
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise ChainAborted(f"chain aborted at iteration {t}: {exc}", chain, t, sampler) from exc
    return chain


# -- B-matrix diagnostics ---------------------------------------------------


@dataclass
class BMatrix:
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int8)
        if self.entries.ndim != 2 or self.entries.size == 0:
            raise ValueError("B-matrix must be a non-empty 2-d array")
        if not np.all((self.entries == 0) | (self.entries == 1)):
            raise ValueError("B-matrix entries must be 0 or 1")

    @property
    def row_means(self) -> np.ndarray:
        """Per-latent-draw estimates of the constrained normalizing constant."""
        return self.entries.mean(axis=1)

    @property
    def column_means(self) -> np.ndarray:
        """Pointwise admissibility probability of each ``theta`` draw."""
        return self.entries.mean(axis=0)


def _b_row(i, state, theta_units, design, cfg, seed, family):
    k = latent_kernel(state, family)
    L, _ = chol_jitter(cov_matrix(k, design))
    w = solve_triangular(L, state.zeta - state.mu, lower=True, check_finite=False)
    m = cfg.size
    slices = np.vstack([cfg.slice_design(th) for th in theta_units])
    V = solve_triangular(L, cov_matrix(k, design, slices), lower=True, check_finite=False)
    means = state.mu + V.T @ w
    # identical for every theta: the t-coordinates of a slice coincide
    prior_cov = cov_matrix(k, cfg.slice_design(theta_units[0]))
    row = np.empty(len(theta_units), dtype=np.int8)
    for j in range(len(theta_units)):
        Vj = V[:, j * m : (j + 1) * m]
        cov = prior_cov - Vj.T @ Vj
        draw = draw_mvn(means[j * m : (j + 1) * m], 0.5 * (cov + cov.T), stream(seed, BMATRIX, i, j))
        row[j] = admissible(draw, cfg)
    return row


def build_b_matrix(
    theta_units,
    latent_states,
    fail_data: FailureDataset,
    cfg: AdmissibilityConfig,
    seed: int = 0,
    family: str = "matern32",
    workers: int = 1,
) -> BMatrix:
    """Entry ``(i, j)``: is ``theta_j`` admissible under a predictive draw from latent state ``i``?

    Cell ``(i, j)`` draws from its own stream ``(seed, BMATRIX, i, j)``, so the
    result does not depend on ``workers``.
    """
    theta_units = np.asarray(theta_units, dtype=float)
    if theta_units.ndim == 1:
        theta_units = theta_units.reshape(-1, fail_data.dt)
    design = fail_data.kernel_design(cfg.mode)
    args = [(i, s, theta_units, design, cfg, seed, family) for i, s in enumerate(latent_states)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_b_row_star, args))
    else:
        rows = [_b_row(*a) for a in args]
    return BMatrix(np.vstack(rows))


def _b_row_star(args):
    return _b_row(*args)


def pi_hat(theta_draws, inside) -> float:
    """Fraction of draws in a fixed set.

    ``inside`` is either a callable on one draw or a ``(low, high)`` interval
    (open) applied to one-dimensional draws.
    """
    theta_draws = np.asarray(theta_draws, dtype=float)
    if callable(inside):
        hits = [bool(inside(th)) for th in theta_draws]
    else:
        lo, hi = inside
        flat = theta_draws.reshape(len(theta_draws), -1)
        if flat.shape[1] != 1:
            raise ValueError("interval membership needs one-dimensional draws")
        hits = (flat[:, 0] > lo) & (flat[:, 0] < hi)
    return float(np.mean(hits)) if len(theta_draws) else float("nan")


@dataclass
class AdmissibilitySummary:
    always_fail: float
    always_succeed: float
    pointwise: np.ndarray
    row_means: np.ndarray
    low_cut: float = 0.1
    high_cut: float = 0.9
    extra: dict = field(default_factory=dict)

    @property
    def resampling_weights(self) -> np.ndarray:
        s = self.pointwise.sum()
        return self.pointwise / s if s > 0 else np.zeros_like(self.pointwise)

    def to_dict(self) -> dict:
        return {
            "always_fail": self.always_fail,
            "always_succeed": self.always_succeed,
            "low_cut": self.low_cut,
            "high_cut": self.high_cut,
            "row_mean_min": float(self.row_means.min()),
            "row_mean_max": float(self.row_means.max()),
            "row_mean_median": float(np.median(self.row_means)),
            "n_latent": int(self.row_means.size),
            "n_theta": int(self.pointwise.size),
        }


def admissibility_summary(B: BMatrix, low_cut: float = 0.1, high_cut: float = 0.9) -> AdmissibilitySummary:
    pi_j = B.column_means
    return AdmissibilitySummary(
        always_fail=float(np.mean(pi_j <= low_cut)),
        always_succeed=float(np.mean(pi_j >= high_cut)),
        pointwise=pi_j,
        row_means=B.row_means,
        low_cut=low_cut,
        high_cut=high_cut,
    )


def density_table(values, bins: int = 50, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Histogram density and empirical CDF on ``bins`` cells: columns (mid, density, cdf)."""
    values = np.asarray(values, dtype=float)
    dens, edges = np.histogram(values, bins=bins, range=(lo, hi), density=True)
    mids = 0.5 * (edges[:-1] + edges[1:])
    cdf = np.array([np.mean(values <= e) for e in edges[1:]])
    return np.column_stack([mids, dens, cdf])
