"""Gibbs sampling of latent utilities conditioned on an observed ranking.

Given a ballot, the latent utility vector is distributed as the product of
the per-alternative families restricted to the cone the ranking describes:
prefix utilities in decreasing order, tail utilities below the prefix
minimum.  Single-site conditionals are then the families truncated to the
interval between rank neighbours, so the chain only ever needs the
truncated operations from the distributions module.

Two entry points sample the same chain.  ``sweep`` resamples one coordinate
of an explicit state and is convenient for unit tests; ``estimate_suff_stats``
runs a full chain and returns the per-alternative Rao-Blackwellized
sufficient-statistic estimates.  The latter is backed by a vectorized engine
(``run_chains``) that advances many agents' chains in lock step, one uniform
per single-site update, with every chain driven by its own seed stream; a
batch of one is therefore bit-identical to the batched run, which is what
lets the E-step parallelize freely across agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .distributions import (
    KINDS,
    ZeroMassIntervalError,
    _ONE_MINUS,
    _texp_kernel,
    _TINY,
    _tn_kernel,
    truncated_sample,
)
from .prefdata import CompletedBallot

SCAN_MODES = ("permutation", "random")


@dataclass(frozen=True)
class GibbsConfig:
    """Chain settings for one sufficient-statistic estimation.

    n_samples is the number of retained scans N; each retained scan visits
    every coordinate once, so N values are averaged per alternative.
    rb_samples = None uses the exact conditional mean of T at each visit
    (the infinite inner-sample limit); an integer M instead averages M
    draws from the conditional, matching the plain nested estimator.
    thinning F keeps every round(1/F)-th scan after burn-in.
    """

    n_samples: int = 2000
    rb_samples: int | None = None
    thinning: float = 1.0
    burn_in: int = 10
    seed: int | np.random.SeedSequence = 0
    scan: str = "permutation"
    rao_blackwell: bool = True

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not 0.0 < self.thinning <= 1.0:
            raise ValueError("thinning must lie in (0, 1]")
        if self.n_samples * self.thinning < 1.0:
            raise ValueError("n_samples * thinning must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.rb_samples is not None and self.rb_samples < 1:
            raise ValueError("rb_samples must be None or a positive int")
        if self.scan not in SCAN_MODES:
            raise ValueError("scan must be one of %r" % (SCAN_MODES,))

    @property
    def stride(self):
        return max(1, int(round(1.0 / self.thinning)))


@dataclass
class LatentState:
    """Latent utilities indexed by alternative."""

    x: np.ndarray

    def is_valid(self, ballot):
        """True when x satisfies the ballot's order constraints strictly."""
        x = self.x
        prefix = ballot.prefix
        for a, b in zip(prefix, prefix[1:]):
            if not x[a] > x[b]:
                return False
        if ballot.tail:
            pmin = x[prefix[-1]]
            return all(x[c] < pmin for c in ballot.tail)
        return True


def init_state(ballot, dists, rng):
    """Constraint-respecting initial state from one draw per alternative.

    The pooled draws are sorted and dealt out best-rank-first, so the
    prefix is decreasing and the tail sits below the prefix minimum.
    """
    from .distributions import sample

    draws = np.array([sample(dists[a], rng) for a in range(ballot.m)])
    x = np.empty(ballot.m)
    x[list(ballot.slots)] = np.sort(draws)[::-1]
    return LatentState(x=x)


def _slot_bounds(ballot, x, pos):
    """Truncation interval for the coordinate at rank position pos."""
    slots = ballot.slots
    k = ballot.k
    upper = np.inf if pos == 0 else x[slots[min(pos, k) - 1]]
    if pos < k - 1:
        lower = x[slots[pos + 1]]
    elif pos == k - 1 and ballot.tail:
        lower = max(x[c] for c in ballot.tail)
    else:
        lower = -np.inf
    return lower, upper


def sweep(state, ballot, dists, rng, position=None):
    """Resample one coordinate from its truncated conditional.

    position picks the rank slot to update (tail slots come after the
    prefix); None draws it uniformly, as in a pure random-scan chain.
    """
    m = ballot.m
    if position is None:
        position = int(rng.integers(m))
    if not 0 <= position < m:
        raise ValueError("position %d out of range for m=%d" % (position, m))
    alternative = ballot.slots[position]
    lower, upper = _slot_bounds(ballot, state.x, position)
    new_x = state.x.copy()
    new_x[alternative] = truncated_sample(dists[alternative], lower, upper, rng)
    out = LatentState(x=new_x)
    if __debug__:
        assert out.is_valid(ballot), "sweep produced an invalid state"
    return out


def _as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _dists_arrays(dists, m):
    kinds = {d.kind for d in dists}
    if len(dists) != m:
        raise ValueError("expected %d families, got %d" % (m, len(dists)))
    if len(kinds) != 1:
        raise ValueError("all alternatives must share one family kind")
    loc = np.array([d.location for d in dists])
    scale = np.array([d.scale for d in dists])
    return kinds.pop(), loc, scale


def estimate_suff_stats(ballot, dists, cfg, second_moment=False):
    """Estimate E[T(x_j) | ballot] for every alternative j by Gibbs sampling.

    Returns the per-alternative vector; with second_moment=True returns
    (S, S2) where S2 estimates E[x_j^2 | ballot] for the normal family.
    Deterministic given cfg.seed.
    """
    kind, loc, scale = _dists_arrays(dists, ballot.m)
    s, s2, _ = run_chains([ballot], kind, loc, scale, cfg,
                          [_as_seedseq(cfg.seed)], second_moment=second_moment)
    return (s[0], s2[0]) if second_moment else s[0]


def sample_states(ballot, dists, cfg, n_chains):
    """One post-burn-in state from each of n_chains independent chains.

    Rows are exact draws from independent chains (alternative-indexed), so
    they are i.i.d. up to burn-in bias; used for stationarity checks.
    """
    kind, loc, scale = _dists_arrays(dists, ballot.m)
    seeds = _as_seedseq(cfg.seed).spawn(n_chains)
    _, _, states = run_chains([ballot] * n_chains, kind, loc, scale,
                              cfg, seeds, return_state=True)
    return states


def _assert_valid_batch(Y, k, tailmask, rows):
    n, m = Y.shape
    pair_in_prefix = (np.arange(1, m)[None, :] < k[:, None])
    assert np.all(Y[:, :-1][pair_in_prefix] > Y[:, 1:][pair_in_prefix]), \
        "prefix order violated"
    if np.any(k < m):
        pmin = Y[rows, k - 1]
        assert np.all(np.where(tailmask, Y, -np.inf) < pmin[:, None]), \
            "tail above prefix minimum"


def run_chains(ballots, kind, loc_alt, scale_alt, cfg, seeds,
               second_moment=False, return_state=False):
    """Advance one chain per ballot and accumulate sufficient statistics.

    ballots must share m; loc_alt/scale_alt are per-alternative parameter
    vectors.  seeds supplies one SeedSequence per chain, and each chain
    consumes its own uniform stream in a fixed pattern (m for the scan
    order, m for the updates, plus m*rb_samples on retained scans), so
    results do not depend on how chains are batched.

    Returns (S, S2, states): S and S2 are (n, m) arrays in alternative
    order (S2 None unless requested), states the final latent vectors
    (None unless requested).
    """
    n = len(ballots)
    if n == 0:
        raise ValueError("need at least one ballot")
    if kind not in KINDS:
        raise ValueError("unknown family kind %r" % (kind,))
    if second_moment and kind != "normal":
        raise ValueError("second-moment estimation applies to the normal family")
    m = ballots[0].m
    if len(seeds) != n:
        raise ValueError("need one seed per chain")
    alt = np.array([b.slots for b in ballots], dtype=np.intp)
    k = np.array([b.k for b in ballots], dtype=np.intp)
    loc_alt = np.asarray(loc_alt, dtype=float)
    scale_alt = np.asarray(scale_alt, dtype=float)
    loc = loc_alt[alt]
    scale = scale_alt[alt]
    rows = np.arange(n)
    tailmask = np.arange(m)[None, :] >= k[:, None]
    any_tail = bool(np.any(k < m))
    gens = [np.random.Generator(np.random.PCG64(s)) for s in seeds]

    normal = kind == "normal"
    if kind == "gumbel":
        eT = np.exp(-loc / scale)  # T(x) = -eT * w in the exponential map
    exact_rb = cfg.rao_blackwell and cfg.rb_samples is None
    M = cfg.rb_samples if (cfg.rao_blackwell and cfg.rb_samples) else 0

    stride = cfg.stride
    n_scans = cfg.burn_in + cfg.n_samples * stride

    def width(s):
        retained = s >= cfg.burn_in and (s - cfg.burn_in) % stride == 0
        return 2 * m + (m * M if retained else 0), retained

    acc = np.zeros((n, m))
    acc2 = np.zeros((n, m)) if second_moment else None

    # Initial state: per-alternative draws dealt out in sorted order.
    u0 = np.empty((n, m))
    for i, g in enumerate(gens):
        u0[i] = g.random(m)
    u0 = np.clip(u0, _TINY, _ONE_MINUS)
    if normal:
        draws = loc + scale * ndtri(u0)
    else:
        draws = loc - scale * np.log(-np.log(u0))
    Y = np.sort(draws, axis=1)[:, ::-1].copy()

    chunk = max(1, int(4_000_000 // max(1, n * 2 * m)))
    s0 = 0
    while s0 < n_scans:
        cs = min(chunk, n_scans - s0)
        widths = []
        flags = []
        for j in range(cs):
            w, r = width(s0 + j)
            widths.append(w)
            flags.append(r)
        offs = np.concatenate(([0], np.cumsum(widths)))
        pool = np.empty((n, offs[-1]))
        for i, g in enumerate(gens):
            pool[i] = g.random(offs[-1])
        for j in range(cs):
            u_scan = pool[:, offs[j]:offs[j] + 2 * m]
            u_rb = pool[:, offs[j] + 2 * m:offs[j + 1]]
            _one_scan(Y, u_scan, u_rb, flags[j], acc, acc2, alt, k, loc,
                      scale, rows, tailmask, any_tail, cfg, normal,
                      None if normal else eT, M, exact_rb, second_moment,
                      s0 + j)
            if __debug__:
                _assert_valid_batch(Y, k, tailmask, rows)
        s0 += cs

    S = acc / cfg.n_samples
    S2 = acc2 / cfg.n_samples if second_moment else None
    bad = ~np.isfinite(S).all(axis=1)
    if S2 is not None:
        bad |= ~np.isfinite(S2).all(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        err = ZeroMassIntervalError(
            "non-finite sufficient statistic estimate for agent %d" % idx)
        err.agent = idx
        raise err
    states = None
    if return_state:
        states = np.empty((n, m))
        states[rows[:, None], alt] = Y
    return S, S2, states


def _one_scan(Y, u_scan, u_rb, retained, acc, acc2, alt, k, loc, scale, rows,
              tailmask, any_tail, cfg, normal, eT, M, exact_rb,
              second_moment, scan_index):
    n, m = Y.shape
    uperm = u_scan[:, :m]
    if cfg.scan == "permutation":
        order = np.argsort(uperm, axis=1)
    else:
        order = np.minimum((uperm * m).astype(np.intp), m - 1)
    want_mean = retained and exact_rb
    for j in range(m):
        slot = order[:, j]
        upper_idx = np.maximum(np.minimum(slot, k) - 1, 0)
        upper = np.where(slot == 0, np.inf, Y[rows, upper_idx])
        lower = np.full(n, -np.inf)
        mid = slot < k - 1
        if mid.any():
            lower[mid] = Y[rows[mid], slot[mid] + 1]
        if any_tail:
            closing = (slot == k - 1) & (k < m)
            if closing.any():
                sub = np.where(tailmask[closing], Y[closing], -np.inf)
                lower[closing] = sub.max(axis=1)
        mu = loc[rows, slot]
        sg = scale[rows, slot]
        u_j = u_scan[:, m + j]
        if normal:
            alpha = (lower - mu) / sg
            beta = (upper - mu) / sg
            z, m1, m2 = _tn_kernel(alpha, beta, u=u_j, mean=want_mean,
                                   second=want_mean and second_moment)
            _raise_on_nan(z, scan_index)
            x_new = mu + sg * z
            if retained:
                if exact_rb:
                    val = mu + sg * m1
                    val2 = (mu ** 2 + 2.0 * mu * sg * m1 + sg ** 2 * m2) \
                        if second_moment else None
                elif M:
                    u_m = u_rb[:, j * M:(j + 1) * M]
                    zM, _, _ = _tn_kernel(alpha[:, None], beta[:, None], u=u_m)
                    xM = mu[:, None] + sg[:, None] * zM
                    val = xM.mean(axis=1)
                    val2 = (xM ** 2).mean(axis=1) if second_moment else None
                else:
                    val = x_new
                    val2 = x_new ** 2 if second_moment else None
        else:
            with np.errstate(over="ignore", under="ignore"):
                wl = np.exp(-(upper - mu) / sg)
                wu = np.exp(-(lower - mu) / sg)
            w, wm = _texp_kernel(wl, wu, u=u_j, mean=want_mean)
            _raise_on_nan(w, scan_index)
            e = eT[rows, slot]
            x_new = mu - sg * np.log(w)
            if retained:
                if exact_rb:
                    val = -e * wm
                elif M:
                    u_m = u_rb[:, j * M:(j + 1) * M]
                    wM, _ = _texp_kernel(wl[:, None], wu[:, None], u=u_m)
                    val = -e * wM.mean(axis=1)
                else:
                    val = -e * w
                val2 = None
        Y[rows, slot] = x_new
        if retained:
            a_j = alt[rows, slot]
            acc[rows, a_j] += val
            if second_moment and val2 is not None:
                acc2[rows, a_j] += val2


def _raise_on_nan(values, scan_index):
    bad = np.isnan(values)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        err = ZeroMassIntervalError(
            "zero-mass truncation interval for agent %d at scan %d; "
            "latent state is corrupted" % (idx, scan_index))
        err.agent = idx
        raise err
