import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from failcal.coupled import (
    AdmissibilityConfig,
    BMatrix,
    ChainAborted,
    CoupledSampler,
    admissibility_summary,
    admissible,
    build_b_matrix,
    density_table,
    make_admissibility,
    pi_hat,
    run_chain,
    run_coupled_mcmc,
)
from failcal.koh import CalibrationDataset, CalibrationSampler
from failcal.latent import FailureDataset, LatentState
from failcal.mcmc import CALIBRATION, Chain, Uniform, stream
from failcal.toy import ToySpec, generate_toy


def grid_cfg(n=10, p_tol=0.0):
    return AdmissibilityConfig("c2", np.linspace(0, 1, n), p_tol=p_tol)


def test_all_positive_and_negative():
    cfg = grid_cfg()
    assert admissible(np.ones(10), cfg)
    assert not admissible(-np.ones(10), cfg)


def test_ninety_percent_example():
    z = np.r_[np.ones(9), -1.0]
    assert not admissible(z, grid_cfg(p_tol=0.05))
    assert admissible(z, grid_cfg(p_tol=0.15))


def test_c1_point_check():
    cfg = AdmissibilityConfig("c1")
    assert admissible([0.2], cfg) and not admissible([0.0], cfg) and not admissible([-0.1], cfg)
    assert cfg.slice_design([0.3]).shape == (1, 1)


@given(arrays(float, 12, elements=st.floats(-3, 3)))
def test_ptol_zero_is_min_check(z):
    assert admissible(z, grid_cfg(12)) == bool(np.min(z) > 0)


@given(arrays(float, 12, elements=st.floats(-3, 3)), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_ptol(z, a, b):
    lo, hi = sorted((a, b))
    if admissible(z, grid_cfg(12, lo)):
        assert admissible(z, grid_cfg(12, hi))


def test_config_validation():
    with pytest.raises(ValueError):
        AdmissibilityConfig("c2", None)
    with pytest.raises(ValueError):
        AdmissibilityConfig("c2", np.zeros((3, 1)), weights=[0.5, 0.5])
    with pytest.raises(ValueError):
        AdmissibilityConfig("c2", np.zeros((2, 1)), weights=[0.6, 0.6])
    with pytest.raises(ValueError):
        AdmissibilityConfig("c3")
    with pytest.raises(ValueError):
        AdmissibilityConfig("c1", p_tol=1.5)
    with pytest.raises(ValueError):
        admissible(np.ones(3), grid_cfg(4))


def test_weights_sum_tolerance():
    w = np.full(3, 1 / 3)
    AdmissibilityConfig("c2", np.zeros((3, 1)), weights=w)


def test_make_admissibility():
    g = make_admissibility("c2", 1, 50, "grid")
    assert g.size == 50 and np.allclose(g.xtilde[:, 0], np.linspace(0, 1, 50))
    a = make_admissibility("c2", 3, 40, "lhs", rng=np.random.default_rng(1))
    b = make_admissibility("c2", 3, 40, "lhs", rng=np.random.default_rng(1))
    assert np.array_equal(a.xtilde, b.xtilde) and a.xtilde.shape == (40, 3)
    assert make_admissibility("c1", 2).size == 1
    with pytest.raises(ValueError):
        make_admissibility("c2", 1, 5, "sobol")


def test_slice_design():
    cfg = grid_cfg(4)
    s = cfg.slice_design([0.7])
    assert s.shape == (4, 2) and np.all(s[:, 1] == 0.7)


# -- coupled sampler ------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy():
    cal, fail, truth = generate_toy(ToySpec(seed=3))
    return cal.standardized(), fail, truth


def test_vacuity_ptol_one(toy):
    cal, fail, _ = toy
    seed, n = 11, 150
    cfg = make_admissibility("c2", 1, 20, "grid", p_tol=1.0)
    coupled = CoupledSampler(cal, fail, [Uniform(0, 1)], cfg, seed, 0)
    plain = CalibrationSampler(cal, [Uniform(0, 1)], stream(seed, 0, CALIBRATION))
    for _ in range(n):
        coupled.step()
        plain.step()
        assert np.array_equal(coupled.calibration.theta_real, plain.theta_real)
        assert np.array_equal(coupled.calibration.snapshot(), plain.snapshot())


def test_gate_soundness(toy):
    cal, fail, _ = toy
    cfg = make_admissibility("c2", 1, 20, "grid")
    run = run_coupled_mcmc(cal, fail, [Uniform(0, 1)], cfg, 200, 50, 1, seed=4)
    assert len(run.chain) == 150
    assert np.all(run.chain.column("admitted") == 1.0)
    assert 0 < run.acceptance["gate_pass"] <= 1


def test_coupled_deterministic(toy):
    cal, fail, _ = toy
    cfg = make_admissibility("c2", 1, 10, "grid")
    a = run_coupled_mcmc(cal, fail, [Uniform(0, 1)], cfg, 60, 10, 2, seed=9)
    b = run_coupled_mcmc(cal, fail, [Uniform(0, 1)], cfg, 60, 10, 2, seed=9)
    assert a.chain.rows == b.chain.rows
    assert a.chain.columns[-1] == "admitted"


def test_failure_region_proposal_leaves_theta(toy):
    cal, fail, _ = toy
    s = CoupledSampler(cal, fail, [Uniform(0, 1)], make_admissibility("c2", 1, 10), 2, 0)
    before = s.calibration.theta.copy()
    for _ in range(20):
        acc, gate_ok = s.calibration.update_theta(lambda u: False)
        assert not acc and gate_ok is False
    assert np.array_equal(s.calibration.theta, before)


def test_inadmissible_start_is_replaced(toy):
    cal, fail, _ = toy
    s = CoupledSampler(cal, fail, [Uniform(0, 1)], make_admissibility("c2", 1, 20), 5, 0, theta0=[0.01])
    assert s.admitted
    assert s.calibration.theta[0] > 0.1


def test_dimension_mismatch(toy):
    cal, _, _ = toy
    fail = FailureDataset(z=[1, 0], design=np.zeros((2, 3)), dx=1)
    with pytest.raises(ValueError):
        CoupledSampler(cal, fail, [Uniform(0, 1)], make_admissibility("c2", 1, 5), 0)


class Boom:
    def __init__(self, fail_at):
        self.t = 0
        self.fail_at = fail_at

    def step(self):
        self.t += 1
        if self.t == self.fail_at:
            raise np.linalg.LinAlgError("not positive definite")

    def snapshot(self):
        return [float(self.t)]

    def freeze(self):
        pass


def test_run_chain_abort_keeps_partial():
    chain = Chain(["t"], 10, 0, 1)
    with pytest.raises(ChainAborted) as info:
        run_chain(Boom(6), chain, 10)
    assert info.value.iteration == 6
    assert [r[0] for r in info.value.chain.rows] == [1, 2, 3, 4, 5]


def test_run_chain_callback_order():
    seen = []
    run_chain(Boom(99), Chain(["t"], 5), 5, callback=seen.append)
    assert seen == [1, 2, 3, 4, 5]


# -- known constraint ------------------------------------------------------------------------


def tiny_calibration():
    rng = np.random.default_rng(0)
    x = np.array([0.1, 0.5, 0.9])
    grid = np.array([(a, t) for a in (0.0, 0.5, 1.0) for t in (0.0, 0.5, 1.0)])
    eta = np.sin(3 * grid[:, 0]) + 2 * grid[:, 1]
    y = np.sin(3 * x) + 2 * 0.45 + 0.05 * rng.standard_normal(3)
    return CalibrationDataset(y, x[:, None], eta, grid[:, :1], grid[:, 1:]).standardized()


def theta_chain(data, n, gate=None, seed=0, thin=4):
    s = CalibrationSampler(data, [Uniform(0, 1)], stream(seed, 0, CALIBRATION), theta0=[0.45])
    out = []
    for t in range(n * thin + 2000):
        s.update_theta(gate)
        if t >= 2000 and t % thin == 0:
            out.append(s.theta[0])
    return np.array(out)


def test_known_constraint_small():
    data = tiny_calibration()
    lo, hi = 0.3, 0.6
    free = theta_chain(data, 20000, seed=1)
    ref = free[(free > lo) & (free < hi)]
    gated = theta_chain(data, 5000, gate=lambda u: lo < u[0] < hi, seed=2)
    assert np.all((gated > lo) & (gated < hi))
    assert stats.ks_2samp(gated, ref).statistic < 0.06


# -- B-matrix --------------------------------------------------------------------------


def test_bmatrix_hand_case():
    B = BMatrix([[1, 0], [1, 1]])
    assert B.row_means.tolist() == [0.5, 1.0]
    assert B.column_means.tolist() == [1.0, 0.5]


@given(arrays(np.int8, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 1)))
def test_row_column_duality(E):
    B = BMatrix(E)
    assert np.mean(B.row_means) == pytest.approx(np.mean(B.column_means))
    assert np.mean(B.row_means) == pytest.approx(E.mean())


def test_bmatrix_validation():
    with pytest.raises(ValueError):
        BMatrix([[0, 2]])
    with pytest.raises(ValueError):
        BMatrix(np.zeros((0, 3)))


def test_positive_latent_gives_row_of_ones():
    fail = FailureDataset(z=[1, 1, 1], design=[[0.1, 0.2], [0.5, 0.5], [0.9, 0.1]], dx=1)
    state = LatentState([50.0, 50.0, 50.0], 50.0, [0.5, 0.5])
    B = build_b_matrix(np.linspace(0.05, 0.95, 7), [state], fail, grid_cfg(8), seed=0)
    assert B.entries.tolist() == [[1] * 7]


def test_bmatrix_workers_agree(toy):
    _, fail, _ = toy
    cfg = make_admissibility("c2", 1, 10)
    states = [LatentState.initial(fail, "c2", lam) for lam in (0.3, 0.6, 1.0)]
    th = np.linspace(0.1, 0.9, 9)
    a = build_b_matrix(th, states, fail, cfg, seed=3)
    b = build_b_matrix(th, states, fail, cfg, seed=3, workers=2)
    assert np.array_equal(a.entries, b.entries)


def test_pi_hat():
    d = np.array([0.1, 0.3, 0.5, 0.9])
    assert pi_hat(d, (0.0, 1.0)) == 1.0
    assert pi_hat(d, (0.95, 1.0)) == 0.0
    assert pi_hat(d, (0.2, 0.6)) == 0.5
    assert pi_hat(d, lambda th: th < 0.4) == 0.5
    with pytest.raises(ValueError):
        pi_hat(np.zeros((3, 2)), (0, 1))


def test_summary_all_ones():
    s = admissibility_summary(BMatrix(np.ones((3, 4))))
    assert (s.always_fail, s.always_succeed) == (0.0, 1.0)
    assert np.allclose(s.resampling_weights, 0.25)
    assert s.to_dict()["n_theta"] == 4


def test_summary_cuts():
    E = np.array([[0, 1, 1, 0], [0, 1, 0, 0], [0, 1, 1, 1]])
    s = admissibility_summary(BMatrix(E), 0.1, 0.9)
    assert s.always_fail == 0.25 and s.always_succeed == 0.25


def test_density_table():
    v = np.random.default_rng(0).random(1000)
    t = density_table(v, 10)
    assert t.shape == (10, 3)
    assert np.sum(t[:, 1]) * 0.1 == pytest.approx(1.0)
    assert t[-1, 2] == 1.0 and np.all(np.diff(t[:, 2]) >= 0)
