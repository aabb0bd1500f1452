"""Plackett-Luce model: closed-form ranking probabilities and an MM fitter.

The model assigns each alternative a positive worth lambda_j; a ranking is
built by repeatedly choosing the next-best alternative with probability
proportional to worth among those remaining.  It coincides with the
random-utility model whose utilities are unit-scale Gumbel at locations
log lambda_j, which is what makes it a useful exact reference for the
Monte-Carlo machinery.

Partial ballots contribute their prefix choices only, but every remaining
alternative (including the unranked tail) stays in the denominator of each
choice.  Fitting uses the familiar minorize-maximize update, which ascends
the log-likelihood monotonically and converges whenever the comparison
graph is strongly connected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prefdata import ConditionViolationError, check_condition1, complete_partial


@dataclass(frozen=True)
class PLParams:
    """Worth vector, strictly positive and normalized to sum to one."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("lam must be a nonempty vector")
        if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
            raise ValueError("worths must be positive and finite")
        if abs(lam.sum() - 1.0) > 1e-8:
            raise ValueError("worths must sum to one")
        object.__setattr__(self, "lam", lam)

    @property
    def m(self):
        return self.lam.size


def pl_log_prob(ranking, params):
    """Log-probability of a (possibly partial) ranking under the model.

    Sum over prefix positions of log(lam_chosen / sum of remaining worths);
    the remaining set includes the unranked tail.  Invariant under common
    rescaling of the worths since each term is a ratio.
    """
    lam = params.lam
    ballot = complete_partial(ranking)
    if ballot.m != params.m:
        raise ValueError("ranking over m=%d, params over m=%d" % (ballot.m, params.m))
    remaining = lam[list(ballot.slots)].sum()
    total = 0.0
    for a in ballot.prefix:
        if remaining > lam[a]:  # a forced last choice contributes log 1
            total += np.log(lam[a]) - np.log(remaining)
        remaining -= lam[a]
    return float(total)


def pl_fit(profile, tol=1e-10, max_iters=10000):
    """Maximum-likelihood worths by minorize-maximize iteration.

    Raises ConditionViolationError when the comparison graph is not
    strongly connected, in which case the MLE does not exist.  Converges
    when max |delta lam| < tol; each iteration cannot decrease the
    log-likelihood.
    """
    check = check_condition1(profile)
    if not check:
        raise ConditionViolationError(
            "maximum-likelihood worths do not exist: no ballot ranks any of "
            "%r above any of %r" % (check.witness[1], check.witness[0]),
            witness=check.witness)
    m = profile.m
    if m == 1:
        return PLParams(lam=np.ones(1))
    ballots = [(complete_partial(r), w) for r, w in profile.aggregated()]
    # Choice counts per alternative.  The last choice of a total ranking is
    # forced (singleton remainder) and carries no information, so it is
    # excluded from both the wins and the denominators below.
    wins = np.zeros(m)
    for ballot, w in ballots:
        stop = ballot.k - 1 if ballot.k == m else ballot.k
        for a in ballot.prefix[:stop]:
            wins[a] += w
    lam = np.full(m, 1.0 / m)
    for _ in range(max_iters):
        denom = np.zeros(m)
        for ballot, w in ballots:
            slots = list(ballot.slots)
            worth = lam[slots]
            # suffix_sums[r] = total worth still in play before choice r
            suffix_sums = np.cumsum(worth[::-1])[::-1]
            stop = ballot.k - 1 if ballot.k == m else ballot.k
            csum = np.cumsum(w / suffix_sums[:stop])
            # the alternative at slot r stays in play for choices 0..r
            for r in range(ballot.k):
                denom[slots[r]] += csum[min(r, stop - 1)]
            for r in range(ballot.k, m):
                denom[slots[r]] += csum[stop - 1]
        new_lam = wins / denom
        new_lam /= new_lam.sum()
        delta = np.abs(new_lam - lam).max()
        lam = new_lam
        if delta < tol:
            break
    return PLParams(lam=lam)
