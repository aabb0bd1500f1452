"""Tests for the Monte-Carlo EM driver and its closed-form M-steps."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from rumfit.distributions import LocationFamily, ZeroMassIntervalError, ef_decomposition
from rumfit.gibbs import GibbsConfig
from rumfit.mcem import (FitConfig, SuffStatMatrix, e_step, fit, m_step_generic,
                         m_step_normal, variance_bound)
from rumfit.distributions import NoiseModel
from rumfit.prefdata import Profile, Ranking

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def unit_profile(m, orders):
    return Profile(m=m, ballots=[(Ranking(order=tuple(o), m=m), 1) for o in orders])


def quick_cfg(**kw):
    gibbs = kw.pop("gibbs", GibbsConfig(n_samples=200))
    kw.setdefault("sample_schedule", lambda t: 200 + 100 * t)
    return FitConfig(gibbs_base=gibbs, **kw)


def numeric_maximizer(s, n, kind, scale):
    """Gradient root of eta(t)*s - n*A(t) by bracketing bisection.

    The gradient is a central difference of the objective assembled from
    the family decomposition, so this shares no code with the closed-form
    M-step it checks against.
    """
    ef = ef_decomposition(LocationFamily(kind, 0.0, scale))

    def obj(t):
        return ef.eta(t) * s - n * ef.A(t)

    h = 1e-5

    def grad(t):
        return (obj(t + h) - obj(t - h)) / (2.0 * h)

    lo, hi = -1.0, 1.0
    while grad(lo) <= 0.0:
        lo = 2.0 * lo - 1.0
    while grad(hi) >= 0.0:
        hi = 2.0 * hi + 1.0
    return brentq(grad, lo, hi, xtol=1e-12)


# --- M-steps -------------------------------------------------------------

def test_m_step_normal_is_column_mean():
    stats = SuffStatMatrix(S=np.array([[0.0, 1.0], [2.0, 3.0]]))
    theta, sigma = m_step_normal(stats, sigma=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(theta, [1.0, 2.0])
    np.testing.assert_array_equal(sigma, [1.0, 2.0])


def test_m_step_normal_variance_update():
    stats = SuffStatMatrix(S=np.array([[0.0, 1.0], [2.0, 3.0]]),
                           S2=np.array([[2.0, 5.0], [6.0, 11.0]]))
    theta, sigma = m_step_normal(stats, sigma=np.ones(2), estimate_variance=True)
    np.testing.assert_array_equal(theta, [1.0, 2.0])
    np.testing.assert_allclose(sigma, [math.sqrt(3.0), 2.0], rtol=1e-15)


def test_m_step_normal_variance_floor():
    stats = SuffStatMatrix(S=np.full((3, 1), 0.5), S2=np.full((3, 1), 0.25))
    _, sigma = m_step_normal(stats, sigma=np.ones(1), estimate_variance=True)
    assert sigma[0] == pytest.approx(math.sqrt(1e-3), rel=1e-12)


def test_m_step_normal_variance_needs_second_moments():
    stats = SuffStatMatrix(S=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="second moments"):
        m_step_normal(stats, sigma=np.ones(2), estimate_variance=True)


def test_m_step_gumbel_closed_form():
    S = np.array([[-0.5, -1.5], [-0.7, -1.2]])
    stats = SuffStatMatrix(S=S)
    theta = m_step_generic(stats, "gumbel", scales=2.0)
    expected = 2.0 * np.log(2.0 / -S.sum(axis=0))
    np.testing.assert_allclose(theta, expected, atol=1e-9)


def test_m_step_gumbel_rejects_nonnegative_sums():
    stats = SuffStatMatrix(S=np.array([[-1.0, 0.5], [-1.0, 0.5]]))
    with pytest.raises(ValueError, match="sum negative"):
        m_step_generic(stats, "gumbel")


def test_m_step_generic_matches_normal_closed_form():
    rng = np.random.default_rng(3)
    stats = SuffStatMatrix(S=rng.normal(size=(7, 3)))
    theta, _ = m_step_normal(stats, sigma=np.full(3, 1.3))
    generic = m_step_generic(stats, "normal", scales=1.3)
    np.testing.assert_allclose(generic, theta, atol=1e-10)


def test_m_step_unknown_kind():
    with pytest.raises(ValueError, match="unknown family kind"):
        m_step_generic(SuffStatMatrix(S=np.zeros((1, 1))), "cauchy")


@pytest.mark.parametrize("kind", ["normal", "gumbel"])
def test_m_step_agrees_with_numeric_maximizer(kind):
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        scale = float(rng.uniform(0.4, 2.5))
        if kind == "normal":
            colsum = float(rng.normal(scale=3.0 * n))
        else:
            colsum = -float(rng.uniform(0.05, 5.0)) * n
        stats = SuffStatMatrix(S=np.full((n, 1), colsum / n))
        theta = m_step_generic(stats, kind, scales=scale)
        oracle = numeric_maximizer(colsum, n, kind, scale)
        assert theta[0] == pytest.approx(oracle, abs=1e-8)


# --- sufficient-statistic containers ------------------------------------

@pytest.mark.parametrize("bad", [
    dict(S=np.zeros(3)),
    dict(S=np.array([[np.nan]])),
    dict(S=np.zeros((2, 2)), S2=np.zeros((3, 2))),
    dict(S=np.zeros((2, 2)), S2=np.full((2, 2), np.inf)),
])
def test_suff_stat_validation(bad):
    with pytest.raises(ValueError):
        SuffStatMatrix(**bad)


def test_suff_stat_shape_properties():
    stats = SuffStatMatrix(S=np.zeros((4, 3)))
    assert (stats.n, stats.m) == (4, 3)


# --- E-step --------------------------------------------------------------

def test_e_step_conditional_means_m2():
    profile = unit_profile(2, [(0, 1), (1, 0)])
    cfg = quick_cfg(gibbs=GibbsConfig(n_samples=4000))
    stats = e_step(profile, np.zeros(2), NoiseModel("normal"), cfg)
    assert stats.S.shape == (2, 2)
    np.testing.assert_allclose(stats.S[0], [INV_SQRT_PI, -INV_SQRT_PI], atol=0.02)
    np.testing.assert_allclose(stats.S[1], [-INV_SQRT_PI, INV_SQRT_PI], atol=0.02)


def test_e_step_thread_count_is_invisible():
    orders = [(0, 1, 2), (2, 1, 0), (1,), (0, 2), (2, 0, 1)]
    profile = unit_profile(3, orders)
    theta = np.array([0.0, 0.4, -0.2])
    noise = NoiseModel("gumbel")
    one = e_step(profile, theta, noise, quick_cfg(threads=1))
    three = e_step(profile, theta, noise, quick_cfg(threads=3))
    assert np.array_equal(one.S, three.S)


def test_e_step_iteration_index_moves_the_stream():
    profile = unit_profile(2, [(0, 1)])
    cfg = quick_cfg()
    a = e_step(profile, np.zeros(2), NoiseModel("normal"), cfg, iteration=0)
    b = e_step(profile, np.zeros(2), NoiseModel("normal"), cfg, iteration=1)
    assert not np.array_equal(a.S, b.S)


def test_e_step_theta_shape_mismatch():
    profile = unit_profile(2, [(0, 1)])
    with pytest.raises(ValueError, match="expected 2"):
        e_step(profile, np.zeros(3), NoiseModel("normal"), quick_cfg())


def test_e_step_reports_failing_agent():
    profile = unit_profile(2, [(0, 1), (1, 0)])
    theta = np.array([800.0, -800.0])
    with pytest.raises(ZeroMassIntervalError, match="agent 1") as info:
        e_step(profile, theta, NoiseModel("normal"), quick_cfg())
    assert info.value.agent == 1


# --- variance bound ------------------------------------------------------

def test_variance_bound_arithmetic():
    cfg = GibbsConfig(n_samples=1000, rb_samples=5, thinning=0.5)
    assert variance_bound(cfg, n=20, V=2.0) == pytest.approx(1e-5, rel=1e-12)
    # exact conditional means count as a single draw per visit
    cfg = GibbsConfig(n_samples=1000, rb_samples=None, thinning=0.5)
    assert variance_bound(cfg, n=20, V=2.0) == pytest.approx(5e-5, rel=1e-12)
    # so does switching Rao-Blackwellization off entirely
    cfg = GibbsConfig(n_samples=1000, rb_samples=5, rao_blackwell=False)
    assert variance_bound(cfg, n=10, V=1.0) == pytest.approx(1e-4, rel=1e-12)


def test_variance_bound_validation():
    cfg = GibbsConfig()
    with pytest.raises(ValueError, match="agent"):
        variance_bound(cfg, n=0, V=1.0)
    with pytest.raises(ValueError, match="positive real"):
        variance_bound(cfg, n=5, V=0.0)


# --- configuration -------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(max_iters=0),
    dict(min_iters=0),
    dict(param_tol=0.0),
    dict(param_tol=float("nan")),
    dict(sample_schedule=300),
    dict(normalization="zero-sum"),
    dict(threads=0),
])
def test_fit_config_validation(kw):
    with pytest.raises(ValueError):
        FitConfig(**kw)


def test_fit_rejects_unknown_kind():
    with pytest.raises(ValueError, match="unknown family kind"):
        fit(unit_profile(2, [(0, 1), (1, 0)]), "cauchy")


def test_fit_variance_estimation_is_normal_only():
    with pytest.raises(ValueError, match="normal family"):
        fit(unit_profile(2, [(0, 1), (1, 0)]), "gumbel",
            quick_cfg(estimate_variance=True))


def test_fit_rejects_decreasing_schedule():
    profile = unit_profile(2, [(0, 1), (1, 0)])
    cfg = quick_cfg(sample_schedule=lambda t: 100 - 60 * t, max_iters=3,
                    min_iters=3)
    with pytest.raises(ValueError, match="nondecreasing"):
        fit(profile, "normal", cfg)


# --- the EM loop ---------------------------------------------------------

LOPSIDED = [(0, 1)] * 9 + [(1, 0)] * 3


def test_fit_runs_and_pins_first_location():
    result = fit(unit_profile(2, LOPSIDED), "normal",
                 quick_cfg(max_iters=4, min_iters=2, param_tol=0.05))
    assert result.theta[0] == 0.0
    assert result.theta[1] < 0.0  # alternative 0 wins three times in four
    assert result.condition1
    assert not result.warnings
    assert result.sigma is None
    for i, rec in enumerate(result.trace):
        assert rec.n_samples == 200 + 100 * i
        assert rec.max_change >= 0.0


def test_fit_stops_at_min_iters_once_tolerance_is_met():
    result = fit(unit_profile(2, LOPSIDED), "normal",
                 quick_cfg(param_tol=1e9, min_iters=3, max_iters=10))
    assert len(result.trace) == 3
    assert result.converged


def test_fit_hits_max_iters_without_converging():
    result = fit(unit_profile(2, LOPSIDED), "normal",
                 quick_cfg(param_tol=1e-12, min_iters=1, max_iters=2))
    assert len(result.trace) == 2
    assert not result.converged
    # the tolerance is hopeless at this sample size and the fit says so
    assert any("tolerance unreachable" in w for w in result.warnings)


def test_fit_same_seed_is_bitwise_reproducible():
    cfg = quick_cfg(param_tol=1e-12, min_iters=2, max_iters=2)
    a = fit(unit_profile(2, LOPSIDED), "gumbel", cfg)
    b = fit(unit_profile(2, LOPSIDED), "gumbel", cfg)
    assert np.array_equal(a.theta, b.theta)
    for ra, rb in zip(a.trace, b.trace):
        assert np.array_equal(ra.theta, rb.theta)


def test_fit_seed_changes_the_answer():
    base = GibbsConfig(n_samples=200)
    other = GibbsConfig(n_samples=200, seed=1)
    a = fit(unit_profile(2, LOPSIDED), "normal",
            quick_cfg(gibbs=base, param_tol=1e-12, min_iters=2, max_iters=2))
    b = fit(unit_profile(2, LOPSIDED), "normal",
            quick_cfg(gibbs=other, param_tol=1e-12, min_iters=2, max_iters=2))
    assert not np.array_equal(a.theta, b.theta)


def test_fit_thread_count_is_invisible():
    cfg = dict(param_tol=1e-12, min_iters=2, max_iters=2)
    a = fit(unit_profile(2, LOPSIDED), "normal", quick_cfg(threads=1, **cfg))
    b = fit(unit_profile(2, LOPSIDED), "normal", quick_cfg(threads=2, **cfg))
    assert np.array_equal(a.theta, b.theta)


def test_fit_normalizations():
    cfg = dict(param_tol=1e-12, min_iters=2, max_iters=2)
    fixed = fit(unit_profile(3, [(0, 1, 2), (2, 0, 1), (1, 2, 0), (0, 2, 1)]),
                "normal", quick_cfg(normalization="fix-first", **cfg))
    for rec in fixed.trace:
        assert rec.theta[0] == 0.0
    centered = fit(unit_profile(3, [(0, 1, 2), (2, 0, 1), (1, 2, 0), (0, 2, 1)]),
                   "normal", quick_cfg(normalization="mean-zero", **cfg))
    for rec in centered.trace:
        assert abs(rec.theta.mean()) < 1e-12
    # the reported theta is pinned to the first alternative either way
    assert centered.theta[0] == 0.0


def test_fit_tie_warning_on_balanced_data():
    balanced = unit_profile(2, [(0, 1)] * 6 + [(1, 0)] * 6)
    result = fit(balanced, "normal", quick_cfg(param_tol=0.05))
    assert result.tie_warning
    clear = fit(unit_profile(2, LOPSIDED), "normal", quick_cfg(param_tol=0.05))
    assert not clear.tie_warning


def test_fit_estimate_variance_reports_sigma():
    result = fit(unit_profile(2, LOPSIDED), "normal",
                 quick_cfg(estimate_variance=True, param_tol=0.1,
                           min_iters=2, max_iters=3))
    assert result.sigma is not None
    assert result.sigma.shape == (2,)
    assert np.all(result.sigma > 0.0)


def test_fit_unanimous_profile_warns_and_diverges():
    unanimous = unit_profile(2, [(0, 1)] * 8)
    result = fit(unanimous, "normal",
                 quick_cfg(param_tol=1e-12, min_iters=5, max_iters=5))
    assert not result.condition1
    assert any("strongly connected" in w for w in result.warnings)
    drift = [abs(rec.theta[1]) for rec in result.trace]
    assert drift[-1] > drift[0]
    assert drift == sorted(drift)
