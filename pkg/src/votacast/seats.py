"""D'Hondt seat allocation with a legal entry threshold, plus national totals.

Two independent implementations of the same divisor rule are provided:
``dhondt_allocate`` (highest averages over quotients v/1, v/2, ...) and
``jefferson_allocate`` (bisection on a per-seat price until floor demand
meets supply).  They must agree on every instance; the second exists as
an oracle for the first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core import InvalidInputError, VotacastError


class NoEligiblePartyError(VotacastError):
    """Every party fell below the entry threshold."""


class DuplicateProvinceError(InvalidInputError):
    """The same province id appeared twice in a national allocation."""


@dataclass(frozen=True)
class ProvinceVotes:
    """Vote counts (or shares times electorate) for one province."""

    province_id: int
    votes: Mapping[str, float]
    contingent: int

    def __post_init__(self):
        if self.contingent < 1:
            raise InvalidInputError(f"province {self.province_id}: contingent must be >= 1")
        vals = np.array(list(self.votes.values()), dtype=float)
        if vals.size == 0 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise InvalidInputError(f"province {self.province_id}: votes must be finite and >= 0")
        if vals.max() <= 0:
            raise InvalidInputError(f"province {self.province_id}: no party has positive votes")


@dataclass(frozen=True)
class SeatAllocation:
    """Per-province and national seat totals."""

    by_province: dict[int, dict[str, int]]
    national: dict[str, int]

    @property
    def total_seats(self) -> int:
        return sum(self.national.values())

    def seats(self, party: str) -> int:
        return self.national.get(party, 0)


def _as_arrays(votes) -> tuple[list[str], np.ndarray]:
    if isinstance(votes, Mapping):
        labels = list(votes.keys())
        v = np.array([votes[p] for p in labels], dtype=float)
    else:
        v = np.asarray(votes, dtype=float)
        labels = [str(i) for i in range(v.shape[0])]
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("votes must be a non-empty 1-d collection")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InvalidInputError("votes must be finite and non-negative")
    return labels, v


def _eligible_mask(v: np.ndarray, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold < 1.0:
        raise InvalidInputError(f"threshold must be in [0, 1), got {threshold}")
    total = v.sum()
    if total <= 0:
        raise InvalidInputError("total votes must be positive")
    # Threshold is read against valid votes: the parties present in the input.
    eligible = (v / total) >= threshold
    eligible &= v > 0
    if not eligible.any():
        raise NoEligiblePartyError(f"no party reaches the {threshold:.0%} threshold")
    return eligible


def _tie_order(v: np.ndarray) -> np.ndarray:
    # Larger total votes win ties; remaining ties go to earlier canon order.
    return np.lexsort((np.arange(v.size), -v))


def dhondt_allocate(votes, contingent: int, threshold: float = 0.0) -> dict[str, int]:
    """Allocate ``contingent`` seats by highest averages v/1, v/2, ...

    Parties whose share of the input votes is below ``threshold`` are
    excluded from the quotient table entirely.  Equal quotients competing
    for a seat are resolved deterministically: larger vote total first,
    then earlier input order.
    """
    labels, v = _as_arrays(votes)
    if contingent < 1:
        raise InvalidInputError("contingent must be >= 1")
    eligible = _eligible_mask(v, threshold)

    seats = np.zeros(v.size, dtype=int)
    precedence = np.empty(v.size, dtype=int)
    precedence[_tie_order(v)] = np.arange(v.size)
    for _ in range(contingent):
        quotients = np.where(eligible, v / (seats + 1), -np.inf)
        best = quotients.max()
        # Exact float comparison: candidates tied at the top quotient.
        tied = np.flatnonzero(quotients == best)
        winner = tied[np.argmin(precedence[tied])]
        seats[winner] += 1
    return {label: int(s) for label, s in zip(labels, seats)}


def jefferson_allocate(votes, contingent: int, threshold: float = 0.0) -> dict[str, int]:
    """Allocate seats by finding the market-clearing price per seat.

    Bisects on the price p at which the aggregate demand
    ``sum_l floor(votes_l / p)`` equals the seat supply.  Used as an
    independent oracle for :func:`dhondt_allocate`.
    """
    seats, _ = jefferson_allocate_with_price(votes, contingent, threshold)
    return seats


def jefferson_allocate_with_price(
    votes, contingent: int, threshold: float = 0.0
) -> tuple[dict[str, int], float]:
    """As :func:`jefferson_allocate`, also returning the equilibrium price found."""
    labels, v = _as_arrays(votes)
    if contingent < 1:
        raise InvalidInputError("contingent must be >= 1")
    eligible = _eligible_mask(v, threshold)
    ve = np.where(eligible, v, 0.0)

    def demand(price: float) -> int:
        return int(np.floor(ve / price).sum())

    lo = ve.sum() / (contingent + int((ve > 0).sum()))  # demand(lo) >= contingent
    hi = float(ve.max()) * 1.000001                     # demand(hi) == 0
    while demand(lo) < contingent:
        lo /= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if demand(mid) >= contingent:
            lo = mid
        else:
            hi = mid

    # At hi (just past the equilibrium) every party holds exactly its
    # above-the-margin seats; the remainder sit on tied marginal quotients.
    seats = np.floor(ve / hi).astype(int)
    short = contingent - int(seats.sum())
    if short > 0:
        precedence = np.empty(v.size, dtype=int)
        precedence[_tie_order(v)] = np.arange(v.size)
        next_q = np.where(eligible, ve / (seats + 1), -np.inf)
        for _ in range(short):
            best = next_q.max()
            tied = np.flatnonzero(next_q == best)
            winner = tied[np.argmin(precedence[tied])]
            seats[winner] += 1
            next_q[winner] = ve[winner] / (seats[winner] + 1)
    return {label: int(s) for label, s in zip(labels, seats)}, lo


def allocate_nation(province_votes: Iterable[ProvinceVotes], threshold: float = 0.0) -> SeatAllocation:
    """Run the provincial allocations and aggregate seats nationally."""
    by_province: dict[int, dict[str, int]] = {}
    national: dict[str, int] = {}
    for pv in province_votes:
        if pv.province_id in by_province:
            raise DuplicateProvinceError(f"province {pv.province_id} appears twice")
        alloc = dhondt_allocate(pv.votes, pv.contingent, threshold)
        by_province[pv.province_id] = alloc
        for party, s in alloc.items():
            national[party] = national.get(party, 0) + s
    if not by_province:
        raise InvalidInputError("no provinces supplied")
    return SeatAllocation(by_province=by_province, national=national)
