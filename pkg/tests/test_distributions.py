"""Location families: densities, truncation, and sampling."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from rumfit.distributions import (
    LocationFamily,
    NoiseModel,
    ZeroMassIntervalError,
    cdf,
    ef_decomposition,
    log_cdf,
    log_pdf,
    quantile,
    sample,
    sample_ranking,
    sample_utilities,
    truncated_mean_T,
    truncated_mean_sq,
    truncated_sample,
)

EULER_GAMMA = 0.5772156649015329


def _families(rng, count):
    for _ in range(count):
        kind = rng.choice(["normal", "gumbel"])
        yield LocationFamily(kind, float(rng.uniform(-3, 3)),
                             float(rng.uniform(0.3, 2.5)))


# ---------------------------------------------------------------------------
# Densities and the exponential-family decomposition.

def test_log_pdf_matches_ef_identity():
    # Points are drawn from the family itself; far outside the support the
    # assembled sum cancels catastrophically in float64 even though the
    # identity is exact.
    rng = np.random.default_rng(0)
    for fam in _families(rng, 40):
        parts = ef_decomposition(fam)
        x = sample(fam, rng, 25)
        direct = log_pdf(fam, x)
        assembled = (parts.eta(fam.location) * parts.T(x)
                     - parts.A(fam.location) + parts.B(x))
        np.testing.assert_allclose(assembled, direct, rtol=0, atol=1e-10)


@pytest.mark.parametrize("kind", ["normal", "gumbel"])
def test_pdf_normalizes_and_integrates_to_cdf(kind):
    fam = LocationFamily(kind, 0.4, 1.3)
    total, err = integrate.quad(lambda x: math.exp(log_pdf(fam, x)), -40, 60)
    assert abs(total - 1.0) < 1e-9
    for x in (-2.0, 0.4, 3.7):
        part, _ = integrate.quad(lambda u: math.exp(log_pdf(fam, u)), -40, x)
        assert abs(part - cdf(fam, x)) < 1e-9


def test_log_cdf_is_stable_deep_in_the_lower_tail():
    normal = LocationFamily("normal", 0.0, 1.0)
    assert log_cdf(normal, -40.0) == pytest.approx(-804.608442013754, rel=1e-12)
    gumbel = LocationFamily("gumbel", 0.0, 1.0)
    assert log_cdf(gumbel, -30.0) == pytest.approx(-math.exp(30.0), rel=1e-12)
    assert np.isfinite(log_cdf(gumbel, -700.0)) is np.True_


def test_quantile_inverts_cdf():
    rng = np.random.default_rng(1)
    for fam in _families(rng, 10):
        p = rng.uniform(1e-6, 1 - 1e-6, 20)
        np.testing.assert_allclose(cdf(fam, quantile(fam, p)), p,
                                   rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        quantile(LocationFamily("normal", 0.0), 1.5)


def test_family_validation():
    with pytest.raises(ValueError):
        LocationFamily("cauchy", 0.0)
    with pytest.raises(ValueError):
        LocationFamily("normal", 0.0, scale=0.0)
    with pytest.raises(ValueError):
        LocationFamily("normal", math.inf)


# ---------------------------------------------------------------------------
# Unconstrained sampling.

def test_sample_moments():
    rng = np.random.default_rng(2)
    n = 200_000
    x = sample(LocationFamily("normal", 1.5, 2.0), rng, n)
    assert abs(x.mean() - 1.5) < 0.02 and abs(x.var() - 4.0) < 0.08
    y = sample(LocationFamily("gumbel", -1.0, 0.7), rng, n)
    assert abs(y.mean() - (-1.0 + EULER_GAMMA * 0.7)) < 0.02
    assert abs(y.var() - math.pi ** 2 * 0.49 / 6.0) < 0.05


def test_sample_accepts_tuple_shapes():
    rng = np.random.default_rng(3)
    assert sample(LocationFamily("normal", 0.0), rng, (4, 7)).shape == (4, 7)


def test_sample_ranking_matches_big_gaps():
    rng = np.random.default_rng(4)
    noise = NoiseModel("normal")
    theta = np.array([10.0, 0.0, -10.0])
    for _ in range(50):
        assert sample_ranking(theta, noise, rng).order == (0, 1, 2)
    assert sample_ranking(np.zeros(1), noise, rng).order == (0,)
    assert sample_utilities(np.zeros(4), noise, rng).shape == (4,)


def test_noise_model_scale_handling():
    noise = NoiseModel("gumbel", np.array([1.0, 2.0]))
    np.testing.assert_array_equal(noise.scales(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        noise.scales(3)
    with pytest.raises(ValueError):
        NoiseModel("normal", 0.0)
    fams = NoiseModel("normal", 2.0).families(np.array([0.0, 1.0]))
    assert [f.location for f in fams] == [0.0, 1.0]
    assert all(f.scale == 2.0 for f in fams)


# ---------------------------------------------------------------------------
# Truncated operations.  The reference distribution for (lower, upper) is
# F(x | interval) = (F(x) - F(lower)) / (F(upper) - F(lower)).

def _interval_cases(rng, count):
    for fam in _families(rng, count):
        span = abs(rng.normal()) * 3 + 0.2
        lo = fam.location + rng.normal() * 2
        cases = [(lo, lo + span), (-math.inf, lo), (lo, math.inf)]
        yield fam, cases[rng.integers(3)]


def test_truncated_sample_stays_inside_and_matches_conditional_law():
    rng = np.random.default_rng(5)
    for fam, (lo, hi) in _interval_cases(rng, 12):
        draws = truncated_sample(fam, lo, hi, rng, size=4000)
        assert np.all(draws >= lo) and np.all(draws <= hi)
        mass = cdf(fam, hi) - cdf(fam, lo)

        def conditional(x):
            return np.clip((cdf(fam, x) - cdf(fam, lo)) / mass, 0.0, 1.0)

        assert stats.kstest(draws, conditional).pvalue > 1e-3


def test_truncated_sample_broadcasts_bounds():
    rng = np.random.default_rng(6)
    fam = LocationFamily("normal", 0.0)
    upper = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
    draws = truncated_sample(fam, -math.inf, upper, rng)
    assert draws.shape == upper.shape
    assert np.all(draws <= upper)
    scalar = truncated_sample(fam, 0.0, 1.0, rng)
    assert isinstance(scalar, float) and 0.0 <= scalar <= 1.0


@pytest.mark.parametrize("kind, lo, hi", [
    ("normal", 8.0, 8.5),
    ("normal", -37.0, -36.5),
    ("gumbel", -25.0, -24.0),
    ("gumbel", 30.0, 40.0),
])
def test_truncated_operations_far_in_the_tails(kind, lo, hi):
    fam = LocationFamily(kind, 0.0, 1.0)
    rng = np.random.default_rng(7)
    draws = truncated_sample(fam, lo, hi, rng, size=2000)
    assert np.all((draws >= lo) & (draws <= hi))
    parts = ef_decomposition(fam)
    target = truncated_mean_T(fam, lo, hi)
    got = parts.T(draws).mean()
    spread = parts.T(draws).std() / math.sqrt(draws.size)
    assert abs(got - target) < 5 * spread + 1e-12


def test_zero_mass_intervals_raise():
    rng = np.random.default_rng(8)
    with pytest.raises(ZeroMassIntervalError):
        truncated_sample(LocationFamily("normal", 0.0), 40.0, 41.0, rng)
    with pytest.raises(ZeroMassIntervalError):
        truncated_mean_T(LocationFamily("normal", 0.0), 40.0, 41.0)
    with pytest.raises(ZeroMassIntervalError):
        truncated_sample(LocationFamily("gumbel", 0.0), 800.0, 900.0, rng)


def test_bad_bounds_rejected():
    fam = LocationFamily("normal", 0.0)
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        truncated_sample(fam, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        truncated_mean_T(fam, 2.0, -2.0)


def test_truncated_mean_T_matches_numeric_integration():
    rng = np.random.default_rng(10)
    for fam, (lo, hi) in _interval_cases(rng, 14):
        parts = ef_decomposition(fam)
        a = max(lo, fam.location - 45 * fam.scale)
        b = min(hi, fam.location + 45 * fam.scale)
        mass, _ = integrate.quad(lambda x: math.exp(log_pdf(fam, x)), a, b)
        raw, _ = integrate.quad(
            lambda x: float(parts.T(x)) * math.exp(log_pdf(fam, x)), a, b)
        assert truncated_mean_T(fam, lo, hi) == pytest.approx(raw / mass,
                                                              rel=1e-8, abs=1e-10)


def test_truncated_mean_sq_matches_numeric_integration():
    fam = LocationFamily("normal", 0.7, 1.4)
    for lo, hi in [(-1.0, 2.0), (-math.inf, 0.0), (2.5, math.inf)]:
        a, b = max(lo, -60.0), min(hi, 60.0)
        mass, _ = integrate.quad(lambda x: math.exp(log_pdf(fam, x)), a, b)
        raw, _ = integrate.quad(
            lambda x: x * x * math.exp(log_pdf(fam, x)), a, b)
        assert truncated_mean_sq(fam, lo, hi) == pytest.approx(raw / mass,
                                                               rel=1e-8)
    with pytest.raises(ValueError):
        truncated_mean_sq(LocationFamily("gumbel", 0.0), 0.0, 1.0)


def test_truncated_mean_T_vectorizes():
    fam = LocationFamily("normal", 0.0)
    lo = np.array([-1.0, 0.0])
    hi = np.array([0.0, 2.0])
    out = truncated_mean_T(fam, lo, hi)
    assert out.shape == (2,)
    assert out[0] == pytest.approx(truncated_mean_T(fam, -1.0, 0.0))
