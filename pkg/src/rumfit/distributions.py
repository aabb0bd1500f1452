"""Location families for latent utilities: Normal and Gumbel.

Both families are exponential families in their location parameter,

    log f(x | theta) = eta(theta) * T(x) - A(theta) + B(x),

which is what makes the EM updates tractable: the E-step only needs
conditional expectations of T(x) on intervals, and the M-step maximizes a
concave one-dimensional function per alternative.

Truncated operations are the delicate part.  The Normal sampler inverts the
CDF on the conditioned uniform after reflecting the interval so that its
bulk lies where float64 quantiles have resolution, and falls back to
rejection when the interval mass drops below 1e-14.  The Gumbel is handled
exactly through the map w = exp(-(x - theta)/scale), which turns it into a
unit exponential; truncated sampling and truncated moments of T are then
elementary and stable arbitrarily far into either tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .prefdata import Ranking

KINDS = ("normal", "gumbel")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# Interval mass below which the Normal inverse-CDF path hands over to
# rejection sampling; below float64 denormals the interval is treated as
# empty, which in a Gibbs chain signals a corrupted state.
_REJECTION_MASS = 1e-14
_ONE_MINUS = float(np.nextafter(1.0, 0.0))
_TINY = float(np.finfo(float).tiny)


class ZeroMassIntervalError(ValueError):
    """Truncation interval carries no representable probability mass."""


@dataclass(frozen=True)
class LocationFamily:
    """A latent-utility distribution: kind, location and fixed scale."""

    kind: str
    location: float
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown family kind %r" % (self.kind,))
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite, got %r" % (self.scale,))
        if not math.isfinite(self.location):
            raise ValueError("location must be finite, got %r" % (self.location,))


@dataclass(frozen=True)
class EFDecomposition:
    """Callables (eta, T, A, B) of the exponential-family identity."""

    eta: callable
    T: callable
    A: callable
    B: callable


@dataclass(frozen=True)
class NoiseModel:
    """Family shapes for all m alternatives: one kind, per-alternative scale."""

    kind: str
    scale: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown family kind %r" % (self.kind,))
        scale = np.asarray(self.scale, dtype=float)
        if np.any(scale <= 0.0) or not np.all(np.isfinite(scale)):
            raise ValueError("scales must be positive and finite")

    def scales(self, m):
        """Per-alternative scale vector of length m."""
        scale = np.asarray(self.scale, dtype=float)
        if scale.ndim == 0:
            return np.full(m, float(scale))
        if scale.shape != (m,):
            raise ValueError("scale vector has length %d, expected %d" % (scale.size, m))
        return scale.copy()

    def families(self, theta):
        theta = np.asarray(theta, dtype=float)
        scales = self.scales(theta.size)
        return [LocationFamily(self.kind, float(t), float(s))
                for t, s in zip(theta, scales)]


def ef_decomposition(family):
    """The (eta, T, A, B) decomposition of log f(x | theta) for this shape.

    eta and A are functions of the location; T and B are functions of x.
    The scale is fixed inside the closures.
    """
    s = family.scale
    if family.kind == "normal":
        return EFDecomposition(
            eta=lambda t: t / s ** 2,
            T=lambda x: np.asarray(x, dtype=float),
            A=lambda t: t ** 2 / (2.0 * s ** 2),
            B=lambda x: -np.asarray(x, dtype=float) ** 2 / (2.0 * s ** 2)
                        - math.log(s) - _LOG_SQRT_2PI,
        )
    return EFDecomposition(
        eta=lambda t: np.exp(t / s),
        T=lambda x: -np.exp(-np.asarray(x, dtype=float) / s),
        A=lambda t: -t / s,
        B=lambda x: -np.asarray(x, dtype=float) / s - math.log(s),
    )


def log_pdf(family, x):
    x = np.asarray(x, dtype=float)
    z = (x - family.location) / family.scale
    if family.kind == "normal":
        return -0.5 * z ** 2 - math.log(family.scale) - _LOG_SQRT_2PI
    return -z - np.exp(-z) - math.log(family.scale)


def cdf(family, x):
    x = np.asarray(x, dtype=float)
    z = (x - family.location) / family.scale
    if family.kind == "normal":
        return ndtr(z)
    with np.errstate(over="ignore"):
        return np.exp(-np.exp(-z))


def log_cdf(family, x):
    """log F(x), stable in the lower tail."""
    x = np.asarray(x, dtype=float)
    z = (x - family.location) / family.scale
    if family.kind == "normal":
        return log_ndtr(z)
    with np.errstate(over="ignore"):
        return -np.exp(-z)


def quantile(family, p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    if family.kind == "normal":
        return family.location + family.scale * ndtri(p)
    with np.errstate(divide="ignore"):
        return family.location - family.scale * np.log(-np.log(p))


def sample(family, rng, size=None):
    """Unconstrained draw(s) from the family."""
    if family.kind == "normal":
        return rng.normal(family.location, family.scale, size=size)
    return rng.gumbel(family.location, family.scale, size=size)


# ---------------------------------------------------------------------------
# Truncated Normal internals.  All functions work on the standardized
# interval (alpha, beta) and broadcast over arrays.

def _tn_reflect(alpha, beta):
    """Reflect intervals with positive midpoint so that alpha + beta <= 0.

    Quantile resolution of float64 is poor only near u = 1; after this
    reflection the right interval end never sits deeper than ~8 sigma into
    the upper tail unless the interval itself is out there, in which case
    the mirrored computation is the accurate one.
    """
    with np.errstate(invalid="ignore"):
        swap = (alpha + beta) > 0.0  # NaN from inf - inf compares False
    a = np.where(swap, -beta, alpha)
    b = np.where(swap, -alpha, beta)
    return swap, a, b


def _norm_pdf(z):
    with np.errstate(under="ignore"):
        return np.exp(-0.5 * z ** 2) / math.sqrt(2.0 * math.pi)


def _tn_kernel(alpha, beta, u=None, mean=False, second=False):
    """Shared truncated standard-normal kernel.

    Returns (draw, m1, m2), each None unless requested, reusing one set of
    CDF evaluations; the Gibbs chain asks for the draw and the conditional
    mean at the same bounds.  Degenerate intervals yield NaN rather than
    raising so that vectorized callers can locate the offending entry.
    Conditional moments of very narrow intervals come from the midpoint,
    where the conditional law is uniform to first order.
    """
    swap, a, b = _tn_reflect(alpha, beta)
    ca = ndtr(a)
    cb = ndtr(b)
    mass = cb - ca
    with np.errstate(invalid="ignore"):
        bad = ~(mass > 0.0)
        narrow = np.isfinite(a) & np.isfinite(b) & ((b - a) < 1e-8)
    draw = m1 = m2 = None
    if u is not None:
        u = np.where(swap, 1.0 - u, u)
        uprime = np.clip(ca + u * mass, _TINY, _ONE_MINUS)
        x = ndtri(uprime)
        x = np.minimum(np.maximum(x, a), b)
        x = np.where(bad, np.nan, x)
        draw = np.where(swap, -x, x)
    if mean or second:
        mid = 0.5 * (a + b)
        safe_mass = np.where(bad | narrow, 1.0, mass)
        pa = _norm_pdf(a)
        pb = _norm_pdf(b)
        m1 = (pa - pb) / safe_mass
        m1 = np.where(narrow, mid, m1)
        m1 = np.where(bad & ~narrow, np.nan, m1)
        m1 = np.where(swap, -m1, m1)
        if second:
            with np.errstate(invalid="ignore"):
                za = np.where(np.isfinite(a), a * pa, 0.0)
                zb = np.where(np.isfinite(b), b * pb, 0.0)
            m2 = 1.0 + (za - zb) / safe_mass
            m2 = np.where(narrow, mid ** 2, m2)
            m2 = np.where(bad & ~narrow, np.nan, m2)  # symmetric in reflection
    return draw, m1, m2


def _tn_mass(alpha, beta):
    """Interval probability, computed on the reflected side."""
    _, a, b = _tn_reflect(alpha, beta)
    return ndtr(b) - ndtr(a)


def _tn_ppf(alpha, beta, u):
    """Inverse-CDF draw of a standard normal conditioned to (alpha, beta)."""
    draw, _, _ = _tn_kernel(alpha, beta, u=u)
    return draw


def _tn_moments(alpha, beta, second=False):
    """E[Z | alpha < Z < beta] and optionally E[Z^2 | .] for standard Z."""
    _, m1, m2 = _tn_kernel(alpha, beta, mean=True, second=second)
    return (m1, m2) if second else m1


def _tn_rejection(alpha, beta, rng):
    """Scalar rejection sampler for intervals too thin for the inverse CDF.

    Exponential proposal from the near boundary for tail intervals, uniform
    proposal for thin central ones.  Termination is guaranteed for any
    interval with analytically positive mass.
    """
    flip = False
    if beta <= 0.0:
        alpha, beta, flip = -beta, -alpha, True
    if alpha >= 0.5:
        lam = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
        while True:
            x = alpha - math.log1p(-rng.random()) / lam
            if x <= beta and math.log(rng.random() + _TINY) <= -0.5 * (x - lam) ** 2:
                return -x if flip else x
    peak = 0.0 if alpha <= 0.0 <= beta else min(abs(alpha), abs(beta))
    while True:
        x = alpha + (beta - alpha) * rng.random()
        if math.log(rng.random() + _TINY) <= 0.5 * (peak * peak - x * x):
            return -x if flip else x


# ---------------------------------------------------------------------------
# Truncated Gumbel internals, through w = exp(-(x - loc)/scale) ~ Exp(1).
# x in (lo, hi) maps to w in (exp(-(hi-loc)/s), exp(-(lo-loc)/s)); note the
# reversal.  Everything below is exact in that parameterization.

def _texp_bounds(family_loc, family_scale, lower, upper):
    with np.errstate(over="ignore", under="ignore"):
        wl = np.exp(-(upper - family_loc) / family_scale)
        wu = np.exp(-(lower - family_loc) / family_scale)
    return wl, wu


def _texp_kernel(wl, wu, u=None, mean=False):
    """Draw and conditional mean of W ~ Exp(1) given wl < W < wu.

    The mean is wl + 1 - delta/(exp(delta) - 1) with delta = wu - wl, which
    is exact and stable for any delta including infinity.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        delta = wu - wl
        ok = delta > 0.0
        draw = m1 = None
        if u is not None:
            c = -np.expm1(-delta)  # = 1 - exp(-delta), 1.0 when delta = inf
            w = wl - np.log1p(-u * c)
            w = np.maximum(w, _TINY)
            draw = np.where(ok, w, np.nan)
        if mean:
            ratio = np.where(ok, delta / np.expm1(delta), np.nan)
            ratio = np.where(delta == np.inf, 0.0, ratio)
            m1 = np.where(ok, wl + 1.0 - ratio, np.nan)
    return draw, m1


def _texp_ppf(wl, wu, u):
    """Inverse-CDF draw of Exp(1) conditioned to (wl, wu), one uniform."""
    draw, _ = _texp_kernel(wl, wu, u=u)
    return draw


def _texp_mean(wl, wu):
    """E[W | wl < W < wu] for W ~ Exp(1)."""
    _, m1 = _texp_kernel(wl, wu, mean=True)
    return m1


# ---------------------------------------------------------------------------
# Public truncated operations.

def _check_bounds(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(~(lower < upper)):
        raise ValueError("truncation requires lower < upper")
    return lower, upper


def truncated_sample(family, lower, upper, rng, size=None):
    """Draw from the family conditioned to the open interval (lower, upper).

    Stable far into either tail.  Raises ZeroMassIntervalError when the
    interval mass is below representable precision, which inside a Gibbs
    chain indicates a corrupted latent state.
    """
    lower, upper = _check_bounds(lower, upper)
    scalar = size is None and lower.ndim == 0 and upper.ndim == 0
    shape = np.broadcast_shapes(lower.shape, upper.shape) if size is None else (size,)
    lo = np.broadcast_to(lower, shape).astype(float).ravel()
    hi = np.broadcast_to(upper, shape).astype(float).ravel()
    if family.kind == "gumbel":
        wl, wu = _texp_bounds(family.location, family.scale, lo, hi)
        if np.any(~(wl < wu)):
            raise ZeroMassIntervalError(
                "gumbel interval carries no representable mass")
        w = _texp_ppf(wl, wu, rng.random(lo.shape))
        x = family.location - family.scale * np.log(w)
        x = np.minimum(np.maximum(x, lo), hi)
        return float(x[0]) if scalar else x.reshape(shape)
    alpha = (lo - family.location) / family.scale
    beta = (hi - family.location) / family.scale
    mass = _tn_mass(alpha, beta)
    if np.any(mass <= 0.0):
        raise ZeroMassIntervalError("normal interval carries no representable mass")
    x = np.empty(lo.shape)
    easy = mass >= _REJECTION_MASS
    if np.any(easy):
        x[easy] = _tn_ppf(alpha[easy], beta[easy], rng.random(int(easy.sum())))
    for idx in np.flatnonzero(~easy):
        x[idx] = _tn_rejection(alpha[idx], beta[idx], rng)
    out = family.location + family.scale * x
    out = np.minimum(np.maximum(out, lo), hi)
    return float(out[0]) if scalar else out.reshape(shape)


def truncated_mean_T(family, lower, upper):
    """E[T(x) | lower < x < upper], the Rao-Blackwellized E-step kernel.

    Closed form for both families: phi/Phi ratios for the Normal, the
    truncated-exponential mean for the Gumbel.
    """
    lower, upper = _check_bounds(lower, upper)
    scalar = lower.ndim == 0 and upper.ndim == 0
    if family.kind == "gumbel":
        wl, wu = _texp_bounds(family.location, family.scale, lower, upper)
        if np.any(~(wl < wu)):
            raise ZeroMassIntervalError(
                "gumbel interval carries no representable mass")
        out = -math.exp(-family.location / family.scale) * _texp_mean(wl, wu)
    else:
        alpha = (lower - family.location) / family.scale
        beta = (upper - family.location) / family.scale
        m1 = _tn_moments(alpha, beta)
        if np.any(np.isnan(m1)):
            raise ZeroMassIntervalError(
                "normal interval carries no representable mass")
        out = family.location + family.scale * m1
    return float(out) if scalar else out


def truncated_mean_sq(family, lower, upper):
    """E[x^2 | lower < x < upper] for the Normal family (variance E-step)."""
    if family.kind != "normal":
        raise ValueError("second-moment statistics are used for the normal family only")
    lower, upper = _check_bounds(lower, upper)
    scalar = lower.ndim == 0 and upper.ndim == 0
    alpha = (lower - family.location) / family.scale
    beta = (upper - family.location) / family.scale
    m1, m2 = _tn_moments(alpha, beta, second=True)
    if np.any(np.isnan(m1)):
        raise ZeroMassIntervalError("normal interval carries no representable mass")
    out = (family.location ** 2
           + 2.0 * family.location * family.scale * m1
           + family.scale ** 2 * m2)
    return float(out) if scalar else out


def sample_utilities(theta, noise, rng):
    """One independent utility draw per alternative at locations theta."""
    theta = np.asarray(theta, dtype=float)
    scales = noise.scales(theta.size)
    if noise.kind == "normal":
        return rng.normal(theta, scales)
    return rng.gumbel(theta, scales)


def sample_ranking(theta, noise, rng):
    """Draw one ranking: sort sampled utilities in decreasing order.

    Exact ties between float64 draws are resampled; they carry zero
    probability but would otherwise silently depend on sort order.
    """
    theta = np.asarray(theta, dtype=float)
    while True:
        x = sample_utilities(theta, noise, rng)
        order = np.argsort(-x, kind="stable")
        if len(set(x.tolist())) == x.size:
            return Ranking(order=tuple(int(a) for a in order), m=theta.size)
