"""Evidence synthesis: weight local-result simulations by the polls model.

Simulations of province-level shares from the survey model act as the
prior; each simulation's national aggregate is scored against the new
election's polls, and the resulting importance weights turn any function
of local results (vote shares, seat allocations) into a posterior
summary.  Weights live in log space throughout; normalization happens
with a max shift at summary time because a couple hundred Gaussian
dimensions overflow naive exponentiation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import InvalidInputError, PartyCanon, VotacastError
from .polls import PollsEvaluator, PollsPosterior, Poll
from .seats import ProvinceVotes, allocate_nation


class UndefinedWeightError(VotacastError):
    """The prior has zero variance; a precision ratio is undefined."""


class DegenerateWeightsWarning(UserWarning):
    """The effective sample size fell below the configured floor."""


@dataclass
class SimulationEnsemble:
    """S simulations of province-level shares with optional importance weights.

    ``shares`` is (S, provinces, parties); ``national`` holds each
    simulation's electorate-weighted national aggregate.  ``log_weights``
    is None until the polls likelihood has been applied.
    """

    province_ids: list[int]
    electorates: np.ndarray
    canon: PartyCanon
    shares: np.ndarray
    national: np.ndarray
    log_weights: np.ndarray | None = None
    ess_floor: float = 50.0

    def __post_init__(self):
        s, n_prov, n_parties = self.shares.shape
        if self.national.shape != (s, n_parties):
            raise InvalidInputError("national aggregates do not match the share array")
        if len(self.province_ids) != n_prov or self.electorates.shape != (n_prov,):
            raise InvalidInputError("province ids/electorates do not match the share array")
        if self.log_weights is not None and self.log_weights.shape != (s,):
            raise InvalidInputError("log weights must have one entry per simulation")

    @property
    def n_simulations(self) -> int:
        return self.shares.shape[0]

    def normalized_weights(self) -> np.ndarray:
        """Self-normalized weights; equal weights while none are set."""
        if self.log_weights is None:
            return np.full(self.n_simulations, 1.0 / self.n_simulations)
        if not np.all(np.isfinite(self.log_weights)):
            raise InvalidInputError("log weights must be finite")
        shifted = self.log_weights - self.log_weights.max()
        w = np.exp(shifted)
        return w / w.sum()

    def effective_sample_size(self) -> float:
        w = self.normalized_weights()
        return float(1.0 / (w ** 2).sum())

    @property
    def degenerate(self) -> bool:
        return self.log_weights is not None and self.effective_sample_size() < self.ess_floor


def importance_weights(
    ensemble: SimulationEnsemble,
    new_polls: Sequence[Poll],
    posterior: PollsPosterior,
    n_hyper_draws: int = 100,
    ess_floor: float = 50.0,
) -> SimulationEnsemble:
    """Score every simulation's national aggregate against the new polls.

    Returns a copy of the ensemble with log weights set.  An effective
    sample size under ``ess_floor`` attaches a degeneracy warning that
    propagates to every downstream summary.
    """
    evaluator = PollsEvaluator(new_polls, posterior, n_hyper_draws)
    reduced = ensemble.national[:, :-1]
    log_w = evaluator.log_density_batch(reduced)
    weighted = replace(ensemble, log_weights=log_w, ess_floor=ess_floor)
    ess = weighted.effective_sample_size()
    if ess < ess_floor:
        warnings.warn(
            f"importance weights are degenerate: ESS {ess:.1f} < floor {ess_floor:g}",
            DegenerateWeightsWarning,
        )
    return weighted


def weighted_quantiles(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    """Quantiles of a weighted sample (interpolated inverse CDF)."""
    order = np.argsort(values)
    v, w = np.asarray(values)[order], np.asarray(weights)[order]
    cdf = np.cumsum(w)
    cdf = cdf / cdf[-1]
    return np.interp(np.asarray(probs, dtype=float), cdf, v)


@dataclass(frozen=True)
class WeightedSummary:
    point: float
    quantiles: dict[float, float]
    ess: float
    degenerate: bool


def weighted_summary(
    ensemble: SimulationEnsemble,
    g: Callable[[np.ndarray], float],
    probs: Sequence[float] = (0.05, 0.5, 0.95),
) -> WeightedSummary:
    """Self-normalized estimate and weighted quantile intervals of g.

    ``g`` maps one simulation's (provinces x parties) share matrix to a
    scalar.
    """
    w = ensemble.normalized_weights()
    values = np.array([float(g(ensemble.shares[s])) for s in range(ensemble.n_simulations)])
    point = float(values @ w)
    qs = weighted_quantiles(values, w, probs)
    return WeightedSummary(
        point=point,
        quantiles={float(p): float(q) for p, q in zip(probs, qs)},
        ess=ensemble.effective_sample_size(),
        degenerate=ensemble.degenerate,
    )


@dataclass
class SeatDistribution:
    """Weighted seat histograms and summaries per canon party."""

    parties: tuple[str, ...]
    seats: np.ndarray          # (S, parties) per-simulation allocation
    weights: np.ndarray        # normalized
    total_seats: int
    degenerate: bool

    def histogram(self, party: str) -> dict[int, float]:
        col = self.parties.index(party)
        hist: dict[int, float] = {}
        for value, weight in zip(self.seats[:, col], self.weights):
            hist[int(value)] = hist.get(int(value), 0.0) + float(weight)
        return dict(sorted(hist.items()))

    def mean(self) -> np.ndarray:
        return self.seats.T @ self.weights

    def median(self) -> np.ndarray:
        return np.array([
            weighted_quantiles(self.seats[:, i], self.weights, [0.5])[0]
            for i in range(len(self.parties))
        ])

    def interval(self, level: float = 0.9) -> np.ndarray:
        lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
        return np.array([
            weighted_quantiles(self.seats[:, i], self.weights, [lo, hi])
            for i in range(len(self.parties))
        ])


def seat_distribution(
    ensemble: SimulationEnsemble,
    contingents: Mapping[int, int],
    threshold: float = 0.03,
) -> SeatDistribution:
    """Allocate every simulation's provinces and weight the seat outcomes."""
    if ensemble.log_weights is None:
        raise InvalidInputError("set importance weights before summarizing seats")
    missing = [p for p in ensemble.province_ids if p not in contingents]
    if missing:
        raise InvalidInputError(f"contingents missing for provinces {missing}")
    parties = ensemble.canon.labels
    s = ensemble.n_simulations
    seats = np.zeros((s, len(parties)), dtype=int)
    for sim in range(s):
        province_votes = [
            ProvinceVotes(
                province_id=pid,
                votes={
                    party: ensemble.shares[sim, i, col] * ensemble.electorates[i]
                    for col, party in enumerate(parties)
                },
                contingent=int(contingents[pid]),
            )
            for i, pid in enumerate(ensemble.province_ids)
        ]
        allocation = allocate_nation(province_votes, threshold)
        seats[sim] = [allocation.national.get(p, 0) for p in parties]
    total = int(sum(int(contingents[p]) for p in ensemble.province_ids))
    return SeatDistribution(
        parties=parties,
        seats=seats,
        weights=ensemble.normalized_weights(),
        total_seats=total,
        degenerate=ensemble.degenerate,
    )


@dataclass(frozen=True)
class PriorWeight:
    """Share of the synthesized belief attributable to the prior (survey) model."""

    per_party: dict[str, float]
    pooled: float
    clipped: bool


def prior_weight_gaussian(
    prior_national: np.ndarray,
    ensemble: SimulationEnsemble,
    min_prior_draws: int = 100,
    min_ess: float = 50.0,
) -> PriorWeight:
    """Moment-matched Gaussian prior weight of the survey model, per party.

    Matching prior (unweighted) and posterior (weighted) national draws to
    Gaussians, the conjugate-update identity reads the posterior/prior
    variance ratio as the prior's precision share: weight 1 means the
    polls added nothing, weight 0 means they dominate.
    """
    if prior_national.shape[0] < min_prior_draws:
        raise InvalidInputError(
            f"need at least {min_prior_draws} prior draws, got {prior_national.shape[0]}"
        )
    if ensemble.log_weights is None:
        raise InvalidInputError("ensemble must carry importance weights")
    ess = ensemble.effective_sample_size()
    if ess < min_ess:
        raise InvalidInputError(f"posterior ESS {ess:.1f} below the floor {min_ess:g}")

    w = ensemble.normalized_weights()
    labels = ensemble.canon.reduced_labels
    clipped = False
    per_party: dict[str, float] = {}
    for col, label in enumerate(labels):
        prior_var = float(np.var(prior_national[:, col]))
        if prior_var <= 0:
            raise UndefinedWeightError(f"prior variance for {label} is zero")
        post_mean = float(ensemble.national[:, col] @ w)
        post_var = float(((ensemble.national[:, col] - post_mean) ** 2) @ w)
        ratio = post_var / prior_var
        if ratio > 1.0 or ratio < 0.0:
            clipped = True
            ratio = float(np.clip(ratio, 0.0, 1.0))
        per_party[label] = ratio
    pooled = float(np.mean(list(per_party.values())))
    return PriorWeight(per_party=per_party, pooled=pooled, clipped=clipped)
