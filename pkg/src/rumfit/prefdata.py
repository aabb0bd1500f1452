"""Ranking data: ballots, profiles, the ballot file format, and order statistics.

A ranking lists alternatives from most to least preferred by integer index.
Partial ballots mention only a prefix; every unmentioned alternative is
treated as worse than all mentioned ones and mutually unordered.  Profiles
aggregate weighted ballots over a fixed alternative set of size m.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class ParseError(ValueError):
    """Raised on malformed ballot input. Carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = "line %d: %s" % (line_number, message)
        super().__init__(message)
        self.line_number = line_number


class ConditionViolationError(RuntimeError):
    """Raised when a fit requires the comparison graph to be strongly
    connected and it is not.  Carries the failing partition as witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True, order=True)
class Ranking:
    """A (possibly partial) strict ranking of alternatives 0..m-1.

    ``order`` lists alternative indices from best to worst.  A total ranking
    mentions all m alternatives; a partial one mentions a proper prefix.
    """

    order: tuple
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive, got %r" % (self.m,))
        if len(self.order) == 0:
            raise ValueError("ranking must mention at least one alternative")
        order = []
        seen = set()
        for a in self.order:
            if isinstance(a, bool) or not isinstance(a, (int, np.integer)):
                raise ValueError("alternative indices must be ints, got %r" % (a,))
            a = int(a)
            if not 0 <= a < self.m:
                raise ValueError("alternative %d out of range for m=%d" % (a, self.m))
            if a in seen:
                raise ValueError("alternative %d appears twice" % a)
            seen.add(a)
            order.append(a)
        object.__setattr__(self, "order", tuple(order))
        object.__setattr__(self, "m", int(self.m))

    @property
    def is_total(self):
        return len(self.order) == self.m


@dataclass(frozen=True)
class CompletedBallot:
    """A partial ranking in extended form: ranked prefix plus unranked tail.

    Tail alternatives sit below every prefix alternative and carry no order
    among themselves.  ``slots`` concatenates prefix and tail; slot r < k is
    the alternative at rank r, slots k..m-1 hold the tail in index order.
    """

    prefix: tuple
    tail: tuple
    m: int

    @property
    def slots(self):
        return self.prefix + self.tail

    @property
    def k(self):
        return len(self.prefix)


def complete_partial(ranking, mode="worse-than-mentioned"):
    """Extend a partial ranking to its completed form.

    The only supported mode places all unmentioned alternatives below the
    lowest mentioned one, mutually unordered.
    """
    if mode != "worse-than-mentioned":
        raise ValueError("unknown completion mode %r" % (mode,))
    mentioned = set(ranking.order)
    tail = tuple(a for a in range(ranking.m) if a not in mentioned)
    return CompletedBallot(prefix=tuple(ranking.order), tail=tail, m=ranking.m)


class Profile:
    """A weighted multiset of ballots over m alternatives."""

    def __init__(self, m, ballots, names=None):
        self.m = int(m)
        if self.m < 1:
            raise ValueError("m must be positive")
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != self.m:
                raise ValueError("expected %d names, got %d" % (self.m, len(names)))
        self.names = names
        cleaned = []
        for ranking, weight in ballots:
            if not isinstance(ranking, Ranking):
                ranking = Ranking(order=tuple(ranking), m=self.m)
            if ranking.m != self.m:
                raise ValueError("ballot over m=%d in profile with m=%d" % (ranking.m, self.m))
            weight = int(weight)
            if weight <= 0:
                raise ValueError("ballot weight must be positive, got %d" % weight)
            cleaned.append((ranking, weight))
        if not cleaned:
            raise ValueError("profile must contain at least one ballot")
        self.ballots = tuple(cleaned)

    @property
    def n(self):
        """Total number of ballots counting weights."""
        return sum(w for _, w in self.ballots)

    def aggregated(self):
        """Ballots with duplicates merged and sorted lexicographically."""
        acc = {}
        for r, w in self.ballots:
            acc[r.order] = acc.get(r.order, 0) + w
        return [(Ranking(order=o, m=self.m), w) for o, w in sorted(acc.items())]

    def unit_ballots(self):
        """The ballots expanded to unit weight, in aggregated order."""
        out = []
        for r, w in self.aggregated():
            out.extend([r] * w)
        return out

    def __eq__(self, other):
        if not isinstance(other, Profile):
            return NotImplemented
        return (self.m == other.m and self.names == other.names
                and self.aggregated() == other.aggregated())

    def __repr__(self):
        return "Profile(m=%d, n=%d, distinct=%d)" % (self.m, self.n, len(self.aggregated()))


_BALLOT_RE = re.compile(r"^(?:(\d+)\s*:)?\s*(.+)$")


def parse_profile(text):
    """Parse the ballot file format into a Profile.

    Grammar: an ``m=<int>`` line first, an optional ``names=a,b,...`` line,
    then one ballot per line as ``<weight>: i>j>k`` with the weight prefix
    optional (default 1).  ``#`` starts a comment; blank lines are ignored.
    """
    m = None
    names = None
    ballots = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("m="):
            if m is not None:
                raise ParseError("duplicate m= directive", lineno)
            if ballots:
                raise ParseError("m= must precede all ballots", lineno)
            try:
                m = int(line[2:].strip())
            except ValueError:
                raise ParseError("bad alternative count %r" % line[2:].strip(), lineno) from None
            if m < 1:
                raise ParseError("m must be positive", lineno)
            continue
        if line.startswith("names="):
            if m is None:
                raise ParseError("names= requires a preceding m= line", lineno)
            if names is not None:
                raise ParseError("duplicate names= directive", lineno)
            names = tuple(s.strip() for s in line[6:].split(","))
            if len(names) != m:
                raise ParseError("expected %d names, got %d" % (m, len(names)), lineno)
            continue
        if m is None:
            raise ParseError("ballot before m= directive", lineno)
        if "=" in line:
            raise ParseError("ties are not supported in ballots", lineno)
        match = _BALLOT_RE.match(line)
        if match is None:
            raise ParseError("malformed ballot %r" % line, lineno)
        weight = int(match.group(1)) if match.group(1) else 1
        if weight <= 0:
            raise ParseError("ballot weight must be positive", lineno)
        try:
            order = tuple(int(tok.strip()) for tok in match.group(2).split(">"))
        except ValueError:
            raise ParseError("malformed ballot %r" % line, lineno) from None
        try:
            ranking = Ranking(order=order, m=m)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        ballots.append((ranking, weight))
    if m is None:
        raise ParseError("missing m= directive")
    if not ballots:
        raise ParseError("no ballots found")
    return Profile(m=m, ballots=ballots, names=names)


def serialize_profile(profile, header_comments=()):
    """Serialize a Profile to the ballot file format, canonically.

    Duplicate ballots are merged and sorted so that equal profiles produce
    byte-identical output.
    """
    lines = ["# %s" % c if c else "#" for c in header_comments]
    lines.append("m=%d" % profile.m)
    if profile.names is not None:
        lines.append("names=%s" % ",".join(profile.names))
    for ranking, weight in profile.aggregated():
        lines.append("%d: %s" % (weight, ">".join(str(a) for a in ranking.order)))
    return "\n".join(lines) + "\n"


def parse_election_file(text):
    """Convert the common election interchange layout to a Profile.

    Expected layout: the candidate count on the first line, one
    ``<index>,<name>`` line per candidate, a ``<voters>,<sum>,<distinct>``
    summary line, then ``count,c1,c2,...`` ballot lines with 1-based
    candidate indices.  The summary line's totals are not enforced.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise ParseError("empty election file")
    lineno, first = lines[0]
    try:
        m = int(first)
    except ValueError:
        raise ParseError("expected candidate count, got %r" % first, lineno) from None
    if m < 1:
        raise ParseError("candidate count must be positive", lineno)
    if len(lines) < m + 2:
        raise ParseError("truncated election file", lines[-1][0])
    names = [None] * m
    for i in range(m):
        lineno, line = lines[1 + i]
        head, _, rest = line.partition(",")
        try:
            idx = int(head)
        except ValueError:
            raise ParseError("expected candidate line %d, got %r" % (i + 1, line), lineno) from None
        if idx != i + 1 or not rest.strip():
            raise ParseError("expected candidate line %d, got %r" % (i + 1, line), lineno)
        names[i] = rest.strip()
    lineno, summary = lines[1 + m]
    if len(summary.split(",")) != 3:
        raise ParseError("expected summary line 'voters,sum,distinct', got %r" % summary, lineno)
    ballots = []
    for lineno, line in lines[2 + m:]:
        toks = [t.strip() for t in line.split(",") if t.strip()]
        try:
            values = [int(t) for t in toks]
        except ValueError:
            raise ParseError("malformed ballot line %r" % line, lineno) from None
        if len(values) < 2:
            raise ParseError("ballot line needs a count and one candidate", lineno)
        weight, *cands = values
        if weight <= 0:
            raise ParseError("ballot count must be positive", lineno)
        if any(not 1 <= c <= m for c in cands):
            raise ParseError("candidate index out of range in %r" % line, lineno)
        try:
            ranking = Ranking(order=tuple(c - 1 for c in cands), m=m)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        ballots.append((ranking, weight))
    if not ballots:
        raise ParseError("no ballots in election file")
    return Profile(m=m, ballots=ballots, names=tuple(names))


@dataclass(frozen=True)
class ComparisonGraph:
    """Directed pairwise-preference structure implied by a profile.

    adjacency[i, j] is True when some ballot places i above j, counting the
    implied prefix-over-tail pairs of partial ballots.  Tail alternatives of
    the same ballot contribute no edge among themselves.
    """

    m: int
    adjacency: np.ndarray = field(repr=False)

    @property
    def edge_count(self):
        return int(self.adjacency.sum())

    def has_edge(self, i, j):
        return bool(self.adjacency[i, j])


def comparison_graph(profile):
    """Build the comparison graph of a profile."""
    m = profile.m
    adj = np.zeros((m, m), dtype=bool)
    for ranking, _ in profile.aggregated():
        ballot = complete_partial(ranking)
        prefix = ballot.prefix
        for i, a in enumerate(prefix):
            for b in prefix[i + 1:]:
                adj[a, b] = True
            for b in ballot.tail:
                adj[a, b] = True
    np.fill_diagonal(adj, False)
    return ComparisonGraph(m=m, adjacency=adj)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of the strong-connectivity (bounded-MLE) check.

    When unsatisfied, ``witness`` is a failing partition (C1, C2): no ballot
    ever places an alternative of C2 above one of C1, so the likelihood can
    push the two groups apart without bound.
    """

    satisfied: bool
    witness: tuple | None = None

    def __bool__(self):
        return self.satisfied


def check_condition1(profile_or_graph):
    """Check that every two-block partition has a cross-comparison.

    Equivalent to strong connectivity of the comparison graph, which is what
    the maximum-likelihood estimate needs in order to stay bounded.
    """
    if isinstance(profile_or_graph, ComparisonGraph):
        graph = profile_or_graph
    else:
        graph = comparison_graph(profile_or_graph)
    m = graph.m
    if m == 1:
        return CheckResult(satisfied=True)
    n_comp, labels = connected_components(
        csr_matrix(graph.adjacency), directed=True, connection="strong")
    if n_comp == 1:
        return CheckResult(satisfied=True)
    # Pick a source component of the condensation: nothing outside it ever
    # beats anything inside, which is exactly a failing partition.
    adj = graph.adjacency
    for c in range(n_comp):
        inside = labels == c
        if not adj[np.ix_(~inside, inside)].any():
            c1 = tuple(int(a) for a in np.flatnonzero(inside))
            c2 = tuple(int(a) for a in np.flatnonzero(~inside))
            return CheckResult(satisfied=False, witness=(c1, c2))
    raise AssertionError("condensation of a digraph must have a source component")


def kendall_tau(a, b):
    """Kendall rank correlation between two total rankings of the same m.

    Returns (concordant - discordant) / (m choose 2), in [-1, 1].
    """
    if not (isinstance(a, Ranking) and isinstance(b, Ranking)):
        raise ValueError("kendall_tau expects two Rankings")
    if a.m != b.m:
        raise ValueError("rankings disagree on m: %d vs %d" % (a.m, b.m))
    if not (a.is_total and b.is_total):
        raise ValueError("kendall_tau is defined for total rankings")
    m = a.m
    if m == 1:
        raise ValueError("kendall_tau needs at least two alternatives")
    pos_a = np.empty(m, dtype=int)
    pos_b = np.empty(m, dtype=int)
    pos_a[list(a.order)] = np.arange(m)
    pos_b[list(b.order)] = np.arange(m)
    score = 0
    for i in range(m):
        for j in range(i + 1, m):
            sa = np.sign(pos_a[i] - pos_a[j])
            sb = np.sign(pos_b[i] - pos_b[j])
            score += int(sa * sb)
    return score / (m * (m - 1) / 2)
