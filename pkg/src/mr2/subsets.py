"""Enumeration of assumed-valid index subsets and related interaction index sets.

Indices are 1-based in every external interface and converted at module
boundaries, which keeps CLI output and reports free of off-by-one
ambiguity. Fixed-size subsets are listed in revolving-door Gray order:
consecutive members differ by exactly one element exchanged, and the
first member is always (1, ..., k).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import CapacityError, ParameterError

DEFAULT_MEMBER_CAP = 1_000_000


@dataclass(frozen=True)
class SubsetFamily:
    """All k_dagger-element subsets of {1..k_total}, revolving-door ordered."""

    k_total: int
    k_dagger: int
    members: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.members)


def _check_range(k_total: int, k_dagger: int) -> None:
    if k_total < 1:
        raise ParameterError(f"need at least one candidate instrument, got K={k_total}")
    if not 1 <= k_dagger <= k_total:
        raise ParameterError(
            f"k_dagger must lie in [1, {k_total}], got {k_dagger}"
        )


def _revolving_door(n: int, k: int) -> list[tuple[int, ...]]:
    # Bottom-up over m with L(m, j) = L(m-1, j) ++ [t + (m,) for t in reversed(L(m-1, j-1))];
    # only the anti-diagonal band of rows that can still reach (n, k) is kept.
    if k == 0:
        return [()]
    rows: dict[int, list[tuple[int, ...]]] = {0: [()]}
    for m in range(1, n + 1):
        lo = max(1, k - (n - m))
        hi = min(m, k)
        for j in range(hi, lo - 1, -1):
            base = rows.get(j, []) if j < m else []
            prev = rows[j - 1]
            rows[j] = base + [t + (m,) for t in reversed(prev)]
        # rows below the band for step m+1 are dead weight
        keep_from = max(0, k - (n - m) - 1)
        for j in [j for j in rows if 0 < j < keep_from]:
            del rows[j]
    return rows[k]


def enumerate_family(k_total: int, k_dagger: int,
                     member_cap: int = DEFAULT_MEMBER_CAP) -> SubsetFamily:
    """Enumerate the family of k_dagger-subsets of {1..k_total} in Gray order.

    The member count is binomial(k_total, k_dagger); a configured cap keeps
    memory bounded since the count grows combinatorially.
    """
    _check_range(k_total, k_dagger)
    count = math.comb(k_total, k_dagger)
    if count > member_cap:
        raise CapacityError(
            f"binomial({k_total},{k_dagger}) = {count} exceeds the member cap {member_cap}",
            required=count,
        )
    members = tuple(_revolving_door(k_total, k_dagger))
    return SubsetFamily(k_total=k_total, k_dagger=k_dagger, members=members)


def complement(subset: tuple[int, ...], k_total: int) -> tuple[int, ...]:
    """Sorted indices of {1..k_total} not in `subset` (1-based)."""
    seen = set()
    for s in subset:
        if not 1 <= int(s) <= k_total:
            raise ParameterError(f"index {s} outside [1, {k_total}]")
        if s in seen:
            raise ParameterError(f"duplicate index {s} in subset")
        seen.add(s)
    return tuple(s for s in range(1, k_total + 1) if s not in seen)


def partial_id_interactions(k_total: int, k_dagger: int,
                            member_cap: int = DEFAULT_MEMBER_CAP) -> list[tuple[int, ...]]:
    """Index sets whose product interactions are exclusion-safe by counting.

    When at least k_dagger of the k_total candidates are valid, every
    interaction involving k_total - k_dagger + 1 or more candidates must
    contain a valid one. Returns all such index sets, each sorted
    ascending, ordered by (cardinality, lexicographic).
    """
    _check_range(k_total, k_dagger)
    total = sum(math.comb(k_total, order)
                for order in range(k_total - k_dagger + 1, k_total + 1))
    if total > member_cap:
        raise CapacityError(
            f"{total} exclusion-safe interaction sets exceed the member cap {member_cap}",
            required=total,
        )
    out: list[tuple[int, ...]] = []
    for order in range(k_total - k_dagger + 1, k_total + 1):
        out.extend(itertools.combinations(range(1, k_total + 1), order))
    return out
