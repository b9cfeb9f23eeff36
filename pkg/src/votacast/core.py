"""Shared domain types and simplex/softmax utilities.

Conventions used everywhere downstream:

* Vote shares are fractions of the valid vote, stored as numpy arrays
  ordered like the party canon.
* The residual ("others") category is the pivot and sits last in the
  canon; reduced vectors drop that last dimension.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class VotacastError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VotacastError, ValueError):
    """Raised when an operation receives input violating its preconditions."""


class OutOfSimplexError(InvalidInputError):
    """Raised when a reduced vector cannot be lifted back onto the simplex."""


SIMPLEX_ATOL = 1e-9
SYMMETRY_ATOL = 1e-12
PSD_EIG_FLOOR = -1e-10


@dataclass(frozen=True)
class PartyCanon:
    """Ordered party labels with a designated residual ("others") pivot.

    The pivot anchors identifiability: model coefficients for the pivot
    party are fixed at zero, and reduced vectors drop its dimension.
    By convention the pivot is stored last; ingest reorders raw data to
    honour that.
    """

    labels: tuple[str, ...]
    pivot_index: int = field(default=-1)

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise InvalidInputError("canon needs at least two parties")
        if len(set(labels)) != len(labels):
            raise InvalidInputError(f"duplicate party labels: {labels}")
        pivot = self.pivot_index
        if pivot < 0:
            pivot += len(labels)
        if not 0 <= pivot < len(labels):
            raise InvalidInputError(f"pivot index {self.pivot_index} out of range")
        if pivot != len(labels) - 1:
            raise InvalidInputError("pivot party must be stored last in the canon")
        object.__setattr__(self, "pivot_index", pivot)

    @property
    def n_parties(self) -> int:
        return len(self.labels)

    @property
    def reduced_dim(self) -> int:
        return len(self.labels) - 1

    @property
    def pivot_label(self) -> str:
        return self.labels[self.pivot_index]

    @property
    def reduced_labels(self) -> tuple[str, ...]:
        return self.labels[:-1]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidInputError(f"unknown party label {label!r}") from None


#: Canon used for the bundled Spanish data sets.
DEFAULT_CANON = PartyCanon(("PSOE", "PP", "PODEMOS", "CS", "OTHERS"))


def validate_share_vector(values, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Check a per-party share vector lies on the probability simplex."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError(f"share vector must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("share vector has non-finite entries")
    if np.any(v < -atol) or np.any(v > 1.0 + atol):
        raise InvalidInputError(f"share entries outside [0, 1]: {v}")
    total = v.sum()
    if abs(total - 1.0) > atol:
        raise InvalidInputError(f"share vector sums to {total!r}, expected 1")
    return v


def validate_reduced_vector(values, canon: PartyCanon | None = None) -> np.ndarray:
    """Check a pivot-dropped vector: finite, and dimension L-1 if a canon is given."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError(f"reduced vector must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("reduced vector has non-finite entries")
    if canon is not None and v.shape[0] != canon.reduced_dim:
        raise InvalidInputError(
            f"reduced vector has dimension {v.shape[0]}, canon expects {canon.reduced_dim}"
        )
    return v


def validate_cov_matrix(mat, sym_atol: float = SYMMETRY_ATOL, eig_floor: float = PSD_EIG_FLOOR) -> np.ndarray:
    """Check symmetry and positive semidefiniteness of a covariance matrix."""
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"covariance must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("covariance has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > sym_atol:
        raise InvalidInputError(f"covariance asymmetric by {asym:g}")
    smallest = np.linalg.eigvalsh(m)[0] if m.size else 0.0
    if smallest < eig_floor:
        raise InvalidInputError(f"covariance not PSD, smallest eigenvalue {smallest:g}")
    return m


def softmax(scores) -> np.ndarray:
    """Map per-party real scores to a share vector on the simplex.

    Subtracts the maximum score before exponentiating, which makes the
    result exactly shift-invariant and immune to overflow for large
    linear predictors.
    """
    f = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("softmax scores must be finite")
    shifted = f - f.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def reduce_shares(full, canon: PartyCanon | None = None) -> np.ndarray:
    """Drop the pivot (last) entry of a share vector.

    Dropping one dimension is what keeps Gaussian models over shares
    non-degenerate: the full vector is confined to the simplex.
    """
    v = validate_share_vector(full)
    if canon is not None and v.shape[0] != canon.n_parties:
        raise InvalidInputError(
            f"share vector has {v.shape[0]} entries, canon has {canon.n_parties}"
        )
    return v[:-1].copy()


def lift_shares(reduced, canon: PartyCanon | None = None, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Reinsert the pivot entry as one minus the sum of the others."""
    r = validate_reduced_vector(reduced, canon)
    total = r.sum()
    if total > 1.0 + atol or np.any(r < -atol):
        raise OutOfSimplexError(f"reduced vector {r} does not lift onto the simplex")
    full = np.empty(r.shape[0] + 1)
    full[:-1] = r
    full[-1] = 1.0 - total
    return full
