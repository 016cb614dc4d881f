import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate, stats

from failcal.mcmc import (
    AdaptiveProposal,
    Chain,
    ParamBlock,
    ScaledBeta,
    TruncNormal,
    Uniform,
    chain_summaries,
    from_real,
    log_jacobian,
    metropolis_accept,
    prior_from_dict,
    stream,
    summarize,
    to_real,
    to_unit,
)

LOG_PHI0 = -0.5 * math.log(2 * math.pi)


def test_uniform_midpoint_is_zero():
    assert to_real(0.5, Uniform(0, 1)) == 0.0


def test_uniform_2_4_example():
    p = Uniform(2, 4)
    assert to_unit(3.5, p) == 0.75
    assert to_real(3.5, p) == pytest.approx(0.6744897501960817, abs=1e-12)


@pytest.mark.parametrize("x", [0.0, 1.0, -0.1, 1.5])
def test_boundary_guard(x):
    with pytest.raises(ValueError):
        to_real(x, Uniform(0, 1))


def test_log_jacobian_examples():
    assert log_jacobian(0.0, Uniform(0, 1)) == pytest.approx(LOG_PHI0, abs=1e-12)
    assert log_jacobian(0.0, Uniform(0, 2)) == pytest.approx(math.log(2) + LOG_PHI0, abs=1e-12)
    with pytest.raises(ValueError):
        log_jacobian(float("inf"), Uniform(0, 1))


bounds = st.tuples(st.floats(-50, 50), st.floats(1e-3, 100)).map(lambda t: (t[0], t[0] + t[1]))


@given(bounds, st.floats(1e-6, 1 - 1e-6))
def test_round_trip(ab, u):
    a, b = ab
    p = Uniform(a, b)
    x = a + (b - a) * u
    assume(a < x < b)
    back = float(from_real(to_real(x, p), p))
    assert back == pytest.approx(x, rel=1e-12, abs=1e-12 * max(abs(a), abs(b), 1.0))


@given(bounds, st.floats(-4, 4))
def test_jacobian_finite_difference(ab, r):
    p = Uniform(*ab)
    h = 1e-5
    fd = (float(from_real(r + h, p)) - float(from_real(r - h, p))) / (2 * h)
    assert abs(math.exp(log_jacobian(r, p)) - fd) < 1e-6 * max(1.0, ab[1] - ab[0])


@pytest.mark.parametrize(
    "prior",
    [Uniform(-1, 3), TruncNormal(0.2, 0.5, -1, 1), ScaledBeta(2.0, 5.0, 1, 4)],
)
def test_prior_normalized(prior):
    val, _ = integrate.quad(lambda x: math.exp(prior.logpdf(x)), prior.a, prior.b)
    assert val == pytest.approx(1.0, abs=1e-7)
    assert prior.logpdf(prior.b + 1) == -np.inf
    assert prior_from_dict(prior.to_dict()) == prior


@pytest.mark.parametrize("prior", [Uniform(0, 1), TruncNormal(0.3, 0.04, 0, 1), ScaledBeta(2, 3, -2, 2)])
def test_block_density_integrates_on_real_line(prior):
    block = ParamBlock([prior])
    val, _ = integrate.quad(lambda r: math.exp(block.log_density([r])), -9, 9, limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_prior_validation():
    with pytest.raises(ValueError):
        Uniform(1, 1)
    with pytest.raises(ValueError):
        TruncNormal(0, -1, 0, 1)
    with pytest.raises(ValueError):
        ScaledBeta(0, 1, 0, 1)
    with pytest.raises(ValueError):
        prior_from_dict({"kind": "cauchy"})


def test_truncnormal_matches_scipy():
    p = TruncNormal(0.3, 0.25, -0.5, 1.0)
    sd = 0.5
    ref = stats.truncnorm((p.a - p.mean) / sd, (p.b - p.mean) / sd, loc=p.mean, scale=sd)
    for x in (-0.4, 0.0, 0.9):
        assert p.logpdf(x) == pytest.approx(ref.logpdf(x), rel=1e-10)


# -- adaptive proposal --------------------------------------------------------


def test_recursive_matches_batch_covariance():
    X = np.random.default_rng(0).normal(size=(1000, 3)) @ np.array([[1, 0, 0], [0.5, 2, 0], [0, 0.1, 0.3]])
    ap = AdaptiveProposal(3)
    for x in X:
        ap.update(x)
    assert np.max(np.abs(ap.empirical_cov - np.cov(X.T))) < 1e-10
    assert np.max(np.abs(ap.mean - X.mean(0))) < 1e-12
    assert np.allclose(ap.cov, 2.4**2 / 3 * (np.cov(X.T) + 1e-6 * np.eye(3)), atol=1e-10)


def test_constant_history():
    ap = AdaptiveProposal(2, n0=10)
    for _ in range(50):
        ap.update([0.3, -1.0])
    assert np.allclose(ap.empirical_cov, 0.0)
    assert np.allclose(ap.cov, 2.4**2 / 2 * 1e-6 * np.eye(2))


def test_before_n0_unchanged(rng):
    ap = AdaptiveProposal(2, init_scale=0.2, n0=1000)
    before = ap.cov.copy()
    for x in rng.normal(size=(999, 2)):
        ap.update(x)
    assert np.array_equal(ap.cov, before)
    ap.update([0.0, 0.0])
    assert not np.array_equal(ap.cov, before)


def test_freeze_fixes_kernel(rng):
    ap = AdaptiveProposal(2, n0=5)
    for x in rng.normal(size=(20, 2)):
        ap.update(x)
    ap.freeze()
    c = ap.cov.copy()
    for x in rng.normal(size=(20, 2)) * 10:
        ap.update(x)
    assert np.array_equal(ap.cov, c)


def test_proposal_round_trip_dict(rng):
    ap = AdaptiveProposal(2, n0=3)
    for x in rng.normal(size=(10, 2)):
        ap.update(x)
    again = AdaptiveProposal.from_dict(ap.to_dict())
    assert np.array_equal(again.cov, ap.cov)
    a = ap.propose([0, 0], np.random.default_rng(1))
    b = again.propose([0, 0], np.random.default_rng(1))
    assert np.array_equal(a, b)


def test_acceptance_rate_exact():
    ap = AdaptiveProposal(1)
    for k in range(7):
        ap.tally(k % 3 == 0)
    assert ap.acceptance_rate == 3 / 7
    assert math.isnan(AdaptiveProposal(1).acceptance_rate)


def test_metropolis_accept_always_consumes_one_uniform():
    for ratio in (-np.inf, np.nan, -1.0, 0.0, 5.0):
        a, b = np.random.default_rng(3), np.random.default_rng(3)
        metropolis_accept(ratio, a)
        b.random()
        assert a.random() == b.random()


def test_metropolis_accept_rate():
    g = np.random.default_rng(0)
    hits = sum(metropolis_accept(math.log(0.3), g) for _ in range(20000))
    assert abs(hits / 20000 - 0.3) < 0.015


# -- chains and summaries ----------------------------------------------------------


@given(st.integers(1, 400), st.integers(0, 399), st.integers(1, 10))
def test_chain_length(iterations, burnin, thin):
    assume(burnin < iterations)
    c = Chain(["a"], iterations, burnin, thin)
    for t in range(1, iterations + 1):
        if c.wants(t):
            c.record([t])
    assert len(c) == (iterations - burnin) // thin == c.expected_length
    if len(c):
        assert c.rows[0][0] == burnin + thin


def test_chain_validation():
    with pytest.raises(ValueError):
        Chain(["a"], 10, 10, 1)
    with pytest.raises(ValueError):
        Chain(["a"], 10, 0, 0)
    c = Chain(["a", "b"], 0)
    assert len(c) == 0 and c.array().shape == (0, 2)
    with pytest.raises(ValueError):
        c.record([1.0])


def test_median_of_1_to_100():
    s = summarize(np.arange(1, 101))
    assert s["median"] == 50.5
    assert s["quantiles"]["0.5"] == 50.5


def test_constant_chain_summary():
    s = summarize(np.full(30, 2.5))
    assert all(v == 2.5 for v in s["quantiles"].values())
    assert s["sd"] == 0.0


def test_empty_summary_raises():
    with pytest.raises(ValueError):
        summarize([])


def test_chain_summaries_columns():
    c = Chain(["x", "y"], 3, 0, 1, [[1, 2], [3, 4], [5, 6]])
    s = chain_summaries(c)
    assert s["x"]["mean"] == 3 and s["y"]["median"] == 4


def test_streams_are_reproducible_and_distinct():
    a = stream(7, 0, 1).random(5)
    assert np.array_equal(a, stream(7, 0, 1).random(5))
    assert not np.array_equal(a, stream(7, 0, 2).random(5))
    assert not np.array_equal(a, stream(8, 0, 1).random(5))
