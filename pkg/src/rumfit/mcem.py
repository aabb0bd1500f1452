"""Monte-Carlo EM for location-family random utility models.

The latent utilities are never observed, so each iteration replaces the
complete-data sufficient statistics with Gibbs estimates (module
``gibbs``, one chain per unit ballot) and then solves the per-alternative
M-step, which is concave and available in closed form for both
implemented families.  Locations are normalized after every iteration;
the reported result always pins the first alternative to zero.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import SeedSequence

from .distributions import KINDS, NoiseModel, ZeroMassIntervalError
from .gibbs import GibbsConfig, run_chains
from .prefdata import check_condition1, complete_partial

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("fix-first", "mean-zero")

# Free-variance estimates are floored here to keep sigma away from zero.
_SIGMA_SQ_FLOOR = 1e-3


def default_schedule(iteration):
    """Retained Gibbs samples per EM iteration: 2000 + 300 * iteration."""
    return 2000 + 300 * iteration


@dataclass(frozen=True)
class FitConfig:
    """Settings for the EM driver.

    sample_schedule maps the iteration index to the retained Gibbs sample
    count for that E-step and must be nondecreasing.  The stopping rule
    needs the largest parameter change below param_tol and at least
    min_iters iterations, whichever is later; max_iters always caps the
    loop.
    """

    max_iters: int = 100
    min_iters: int = 3
    param_tol: float = 1e-3
    gibbs_base: GibbsConfig = field(default_factory=GibbsConfig)
    sample_schedule: object = default_schedule
    normalization: str = "fix-first"
    estimate_variance: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.min_iters < 1:
            raise ValueError("min_iters must be positive")
        if not (self.param_tol > 0.0 and np.isfinite(self.param_tol)):
            raise ValueError("param_tol must be a positive real")
        if not callable(self.sample_schedule):
            raise ValueError("sample_schedule must be callable")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError("normalization must be one of %r" % (NORMALIZATIONS,))
        if self.threads < 1:
            raise ValueError("threads must be positive")


@dataclass(frozen=True)
class SuffStatMatrix:
    """Estimated E[T(x_j) | ballot, theta], one row per unit ballot.

    S2, present only for free-variance fits, holds the matching
    E[x_j^2 | ballot, theta] estimates.
    """

    S: np.ndarray
    S2: np.ndarray | None = None

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 2:
            raise ValueError("S must be an n-by-m matrix")
        if not np.all(np.isfinite(S)):
            raise ValueError("sufficient statistics must be finite")
        object.__setattr__(self, "S", S)
        if self.S2 is not None:
            S2 = np.asarray(self.S2, dtype=float)
            if S2.shape != S.shape:
                raise ValueError("S2 must have the same shape as S")
            if not np.all(np.isfinite(S2)):
                raise ValueError("sufficient statistics must be finite")
            object.__setattr__(self, "S2", S2)

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def m(self):
        return self.S.shape[1]


@dataclass(frozen=True)
class IterationRecord:
    theta: np.ndarray
    max_change: float
    wall_time: float
    n_samples: int


@dataclass(frozen=True)
class FitResult:
    """Outcome of a Monte-Carlo EM run.

    theta is normalized so theta[0] = 0.  sigma is present only when the
    scales were estimated.  tie_warning flags parameter pairs closer than
    ten times the stopping tolerance, where the induced order is not
    trustworthy.
    """

    theta: np.ndarray
    sigma: np.ndarray | None
    trace: tuple
    condition1: object
    tie_warning: bool
    converged: bool
    warnings: tuple = ()


def _agent_seed(master, iteration, agent):
    """Derive the stream for one chain from the master seed by index."""
    if isinstance(master, SeedSequence):
        key = tuple(master.spawn_key) + (iteration, agent)
        return SeedSequence(entropy=master.entropy, spawn_key=key)
    return SeedSequence(master, spawn_key=(iteration, agent))


def e_step(profile, theta, noise, cfg, iteration=0):
    """Estimate the sufficient-statistic matrix at the current parameters.

    One Gibbs chain per unit ballot, seeded by (iteration, agent index),
    so results are reproducible and independent of batching or thread
    count.  Sampler failures carry the offending agent index.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (profile.m,):
        raise ValueError("theta has length %d, expected %d" % (theta.size, profile.m))
    ballots = [complete_partial(r) for r in profile.unit_ballots()]
    n = len(ballots)
    if n == 0:
        raise ValueError("profile has no ballots")
    scales = noise.scales(profile.m)
    gcfg = cfg.gibbs_base
    seeds = [_agent_seed(gcfg.seed, iteration, i) for i in range(n)]
    second = cfg.estimate_variance

    def run_block(lo, hi):
        try:
            S, S2, _ = run_chains(ballots[lo:hi], noise.kind, theta, scales,
                                  gcfg, seeds[lo:hi], second_moment=second)
        except ZeroMassIntervalError as err:
            agent = getattr(err, "agent", None)
            if agent is not None:
                wrapped = ZeroMassIntervalError(
                    "E-step failed for agent %d: %s" % (lo + agent, err))
                wrapped.agent = lo + agent
                raise wrapped from err
            raise
        return S, S2

    edges = np.linspace(0, n, min(cfg.threads, n) + 1).astype(int)
    blocks = [(int(a), int(b)) for a, b in zip(edges, edges[1:]) if b > a]
    if len(blocks) == 1:
        parts = [run_block(*blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(lambda ab: run_block(*ab), blocks))
    S = np.vstack([p[0] for p in parts])
    S2 = np.vstack([p[1] for p in parts]) if second else None
    return SuffStatMatrix(S=S, S2=S2)


def m_step_normal(stats, sigma, estimate_variance=False):
    """Closed-form normal M-step: theta_j is the column mean of S.

    With estimate_variance, sigma_j is re-estimated from the
    second-moment matrix (floored away from zero); otherwise the current
    sigma passes through unchanged.
    """
    theta = stats.S.mean(axis=0)
    if not estimate_variance:
        return theta, np.asarray(sigma, dtype=float)
    if stats.S2 is None:
        raise ValueError("variance estimation needs second moments")
    var = np.maximum(stats.S2.mean(axis=0) - theta ** 2, _SIGMA_SQ_FLOOR)
    return theta, np.sqrt(var)


def _maximize_coordinate(s, n, kind, scale):
    """Maximize eta(t)*s - n*A(t) over t for one alternative.

    Both families admit a closed-form root of the gradient; a safeguarded
    Newton iteration polishes it to |gradient| < 1e-10 (the objective is
    strictly concave, so the gradient is decreasing).
    """
    if not np.isfinite(s):
        raise ValueError("non-finite sufficient statistic sum")
    if kind == "normal":
        def grad(t):
            return (s - n * t) / scale ** 2

        def hess(t):
            return -n / scale ** 2

        t = s / n
    else:
        if s >= 0.0:
            raise ValueError("Gumbel sufficient statistics must sum negative")

        def grad(t):
            return (np.exp(t / scale) * s + n) / scale

        def hess(t):
            return np.exp(t / scale) * s / scale ** 2

        t = scale * np.log(n / -s)
    lo, hi = t - 1.0, t + 1.0
    span = 1.0
    while grad(lo) < 0.0:
        span *= 2.0
        lo -= span
    while grad(hi) > 0.0:
        span *= 2.0
        hi += span
    for _ in range(100):
        g = grad(t)
        if abs(g) < 1e-10:
            break
        if g > 0.0:
            lo = t
        else:
            hi = t
        step = t - g / hess(t)
        t = step if lo < step < hi else 0.5 * (lo + hi)
    return t


def m_step_generic(stats, kind, scales=1.0):
    """Per-alternative concave maximization of the expected log-density.

    Equivalent to m_step_normal for the normal family; the Gumbel
    maximizer is scale * log(n / -sum_i S_ij).
    """
    if kind not in KINDS:
        raise ValueError("unknown family kind %r" % (kind,))
    n, m = stats.S.shape
    scales = np.broadcast_to(np.asarray(scales, dtype=float), (m,))
    colsum = stats.S.sum(axis=0)
    return np.array([_maximize_coordinate(colsum[j], n, kind, scales[j])
                     for j in range(m)])


def variance_bound(gibbs_cfg, n, V):
    """Monte-Carlo variance bound F*V/(M*N*n) for one location update.

    F is the retained fraction of scans, M the per-visit sample count
    (exact conditional means count as one draw), N the retained sample
    count and n the number of agents.  V bounds the per-alternative
    utility variance.  Retained samples are treated as independent, so a
    strongly correlated chain can exceed the bound by a modest factor.
    """
    if n < 1:
        raise ValueError("need at least one agent")
    if not (V > 0.0 and np.isfinite(V)):
        raise ValueError("V must be a positive real")
    rb = gibbs_cfg.rb_samples if (gibbs_cfg.rao_blackwell and gibbs_cfg.rb_samples) else 1
    return gibbs_cfg.thinning * V / (rb * gibbs_cfg.n_samples * n)


def _normalized(theta, normalization):
    if normalization == "mean-zero":
        return theta - theta.mean()
    return theta - theta[0]


def fit(profile, kind, cfg=None, scale=1.0):
    """Maximum-likelihood locations for a ranking profile by MC-EM.

    Ascends the marginal likelihood from theta = 0 with one Gibbs E-step
    and one closed-form M-step per iteration.  scale fixes the family
    scales (scalar or per-alternative); under cfg.estimate_variance it is
    only the starting point.  A profile that fails the connectivity check
    is fitted anyway but flagged, since the maximizer may then lie at
    infinity.
    """
    if cfg is None:
        cfg = FitConfig()
    if kind not in KINDS:
        raise ValueError("unknown family kind %r" % (kind,))
    if cfg.estimate_variance and kind != "normal":
        raise ValueError("variance estimation applies to the normal family only")
    if profile.n == 0:
        raise ValueError("profile has no ballots")
    m = profile.m

    notes = []
    cond = check_condition1(profile)
    if not cond:
        notes.append(
            "comparison graph is not strongly connected: no ballot ranks any of "
            "%r above any of %r; estimates may diverge"
            % (tuple(cond.witness[1]), tuple(cond.witness[0])))
        logger.warning(notes[-1])
    if cfg.estimate_variance:
        logger.info("estimating scales alongside locations; the marginal "
                    "likelihood is no longer guaranteed concave")

    sig = NoiseModel(kind, scale).scales(m)
    theta = np.zeros(m)
    trace = []
    prev_samples = 0
    converged = False
    for t in range(cfg.max_iters):
        t0 = time.perf_counter()
        n_t = int(cfg.sample_schedule(t))
        if n_t < 1 or n_t < prev_samples:
            raise ValueError("sample_schedule must be positive and nondecreasing")
        prev_samples = n_t
        gcfg = replace(cfg.gibbs_base, n_samples=n_t)
        stats = e_step(profile, theta, NoiseModel(kind, sig),
                       replace(cfg, gibbs_base=gcfg), iteration=t)
        if kind == "normal":
            new_theta, sig = m_step_normal(stats, sig, cfg.estimate_variance)
        else:
            new_theta = m_step_generic(stats, kind, sig)
        new_theta = _normalized(new_theta, cfg.normalization)
        change = float(np.max(np.abs(new_theta - theta)))
        theta = new_theta
        trace.append(IterationRecord(theta=theta.copy(), max_change=change,
                                     wall_time=time.perf_counter() - t0,
                                     n_samples=n_t))
        if t + 1 >= cfg.min_iters and change < cfg.param_tol:
            converged = True
            break

    theta = theta - theta[0]
    if kind == "normal":
        V = float(np.max(sig ** 2))
    else:
        V = float(np.pi ** 2 / 6.0 * np.max(sig ** 2))
    bound = variance_bound(replace(cfg.gibbs_base, n_samples=prev_samples),
                           profile.n, V)
    if bound >= (cfg.param_tol / 3.0) ** 2:
        notes.append(
            "tolerance unreachable at configured sample size: Monte-Carlo "
            "error bound %.3g is not below (param_tol/3)^2 = %.3g"
            % (bound, (cfg.param_tol / 3.0) ** 2))

    tie_warning = False
    if m > 1:
        gaps = np.abs(theta[:, None] - theta[None, :])[np.triu_indices(m, 1)]
        tie_warning = bool(gaps.min() < 10.0 * cfg.param_tol)

    return FitResult(theta=theta,
                     sigma=sig.copy() if cfg.estimate_variance else None,
                     trace=tuple(trace),
                     condition1=cond,
                     tie_warning=tie_warning,
                     converged=converged,
                     warnings=tuple(notes))
