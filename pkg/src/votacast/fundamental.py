"""Survey-trained hierarchical voting model with post-stratification.

Respondents are grouped into demographic strata (province x municipality
size x gender x age x education x activity).  Stratum response counts
follow a multinomial whose cell probabilities are a softmax of a main
effects ANOVA predictor; every factor's level coefficients share a
Gaussian prior with per-party scales, and the scales get half-normal(1)
priors.  Coefficients of the pivot ("others") party are fixed at zero.

The posterior is explored with the package's own HMC sampler on an
unconstrained parameterization (scales on the log scale).
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import InvalidInputError, PartyCanon, VotacastError, softmax
from .inference import SamplerConfig, hmc_sample, rhat


class InvalidStratumError(InvalidInputError):
    """A stratum refers to a factor level outside the declared layout."""


class MissingCensusError(VotacastError):
    """A province has zero total census weight."""


class NotConvergedError(VotacastError):
    """A posterior flagged as non-converged was used where convergence is required."""


#: Demographic factor sizes from the survey codebook (province is prepended
#: with as many levels as the data set declares).
DEMOGRAPHIC_FACTORS = (
    ("municipality_size", 3),
    ("gender", 2),
    ("age", 3),
    ("education", 3),
    ("activity", 3),
)


@dataclass(frozen=True)
class FactorLayout:
    """Names and level counts of the ANOVA factors, province first."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.sizes) or not self.names:
            raise InvalidInputError("layout names and sizes must align")
        if any(s < 1 for s in self.sizes):
            raise InvalidInputError("factor sizes must be >= 1")

    @classmethod
    def for_provinces(cls, province_ids: Sequence[int],
                      demographic=DEMOGRAPHIC_FACTORS) -> "FactorLayout":
        names = ("province",) + tuple(name for name, _ in demographic)
        sizes = (len(province_ids),) + tuple(size for _, size in demographic)
        return cls(names=names, sizes=sizes)

    @property
    def n_factors(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Stratum:
    """One demographic cell: factor levels, survey counts, census weight.

    ``levels`` hold the 1-based codes of the demographic factors (province
    is carried separately as its INE id).  ``counts`` may be all zero for
    strata unobserved in the survey; they still enter post-stratification
    through their census weight.
    """

    province_id: int
    levels: tuple[int, ...]
    counts: np.ndarray
    weight: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise InvalidInputError("stratum counts must be finite and non-negative")
        if self.weight < 0 or not np.isfinite(self.weight):
            raise InvalidInputError("stratum census weight must be finite and non-negative")


class StratumData:
    """Compiled arrays for a set of strata against one canon and layout."""

    def __init__(self, strata: Sequence[Stratum], canon: PartyCanon,
                 electorates: Mapping[int, float] | None = None,
                 demographic=DEMOGRAPHIC_FACTORS):
        if not strata:
            raise InvalidInputError("no strata supplied")
        self.canon = canon
        province_ids = sorted({s.province_id for s in strata})
        self.province_ids = province_ids
        self.layout = FactorLayout.for_provinces(province_ids, demographic)
        prov_index = {p: i for i, p in enumerate(province_ids)}

        n, k, l = len(strata), self.layout.n_factors, canon.n_parties
        self.levels = np.empty((n, k), dtype=int)
        self.counts = np.empty((n, l))
        self.weights = np.empty(n)
        self.prov_idx = np.empty(n, dtype=int)
        sizes = self.layout.sizes
        for row, s in enumerate(strata):
            if len(s.levels) != k - 1:
                raise InvalidStratumError(
                    f"stratum has {len(s.levels)} demographic levels, layout expects {k - 1}"
                )
            if s.counts.shape != (l,):
                raise InvalidInputError(
                    f"stratum counts have shape {s.counts.shape}, canon has {l} parties"
                )
            self.levels[row, 0] = prov_index[s.province_id]
            for f, code in enumerate(s.levels, start=1):
                if not 1 <= code <= sizes[f]:
                    raise InvalidStratumError(
                        f"factor {self.layout.names[f]!r} level {code} outside 1..{sizes[f]}"
                    )
                self.levels[row, f] = code - 1
            self.counts[row] = s.counts
            self.weights[row] = s.weight
            self.prov_idx[row] = prov_index[s.province_id]

        totals = np.zeros(len(province_ids))
        np.add.at(totals, self.prov_idx, self.weights)
        zero = [province_ids[i] for i in np.flatnonzero(totals <= 0)]
        if zero:
            raise MissingCensusError(f"provinces with zero census weight: {zero}")
        if np.max(np.abs(totals - 1.0)) > 1e-9:
            raise InvalidInputError(
                "census weights must sum to 1 per province (worst deviation "
                f"{np.max(np.abs(totals - 1.0)):.2e})"
            )

        if electorates is None:
            self.electorates = np.ones(len(province_ids))
        else:
            missing = [p for p in province_ids if p not in electorates]
            if missing:
                raise MissingCensusError(f"electorate size missing for provinces {missing}")
            self.electorates = np.array([float(electorates[p]) for p in province_ids])

        self.n_strata = n
        self.row_totals = self.counts.sum(axis=1)

    def data_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.levels, self.counts, self.weights, self.electorates):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class FundamentalParams:
    """Natural-space parameters: intercepts, level effects, prior scales.

    ``alpha`` has one entry per party with the pivot fixed at zero;
    ``betas[k]`` is (levels of factor k) x parties, pivot column zero;
    ``sigmas`` is factors x non-pivot parties, all positive.
    """

    alpha: np.ndarray
    betas: list[np.ndarray]
    sigmas: np.ndarray

    def validate(self, layout: FactorLayout, canon: PartyCanon):
        l = canon.n_parties
        if self.alpha.shape != (l,) or self.alpha[-1] != 0.0:
            raise InvalidInputError("alpha must have length L with pivot entry 0")
        if len(self.betas) != layout.n_factors:
            raise InvalidInputError("one beta block per factor required")
        for k, b in enumerate(self.betas):
            if b.shape != (layout.sizes[k], l) or np.any(b[:, -1] != 0.0):
                raise InvalidInputError(f"beta block {k} has wrong shape or non-zero pivot")
        if self.sigmas.shape != (layout.n_factors, l - 1) or np.any(self.sigmas <= 0):
            raise InvalidInputError("sigmas must be positive with shape (factors, L-1)")


class FundamentalTarget:
    """Unconstrained log posterior of the survey model, with analytic gradient.

    Packing order: free intercepts (L-1), then each factor's free level
    coefficients row-major, then log prior scales.  The log-scale change
    of variables contributes its Jacobian term here.
    """

    def __init__(self, data: StratumData):
        self.data = data
        self.canon = data.canon
        self.layout = data.layout
        self.l_free = data.canon.n_parties - 1
        self.k = data.layout.n_factors
        self.sizes = data.layout.sizes
        self._beta_offsets = []
        offset = self.l_free
        for size in self.sizes:
            self._beta_offsets.append(offset)
            offset += size * self.l_free
        self._sigma_offset = offset
        self._dim = offset + self.k * self.l_free

    @property
    def dimension(self) -> int:
        return self._dim

    def pack(self, params: FundamentalParams) -> np.ndarray:
        x = np.empty(self._dim)
        x[: self.l_free] = params.alpha[:-1]
        for k in range(self.k):
            off = self._beta_offsets[k]
            x[off: off + self.sizes[k] * self.l_free] = params.betas[k][:, :-1].ravel()
        x[self._sigma_offset:] = np.log(params.sigmas).ravel()
        return x

    def unpack(self, x: np.ndarray) -> FundamentalParams:
        l = self.l_free + 1
        alpha = np.zeros(l)
        alpha[:-1] = x[: self.l_free]
        betas = []
        for k in range(self.k):
            off = self._beta_offsets[k]
            block = np.zeros((self.sizes[k], l))
            block[:, :-1] = x[off: off + self.sizes[k] * self.l_free].reshape(
                self.sizes[k], self.l_free
            )
            betas.append(block)
        sigmas = np.exp(x[self._sigma_offset:]).reshape(self.k, self.l_free)
        return FundamentalParams(alpha=alpha, betas=betas, sigmas=sigmas)

    def parameter_names(self) -> list[str]:
        names = [f"alpha[{p}]" for p in self.canon.reduced_labels]
        for k in range(self.k):
            fname = self.layout.names[k]
            for j in range(self.sizes[k]):
                label = self.data.province_ids[j] if fname == "province" else j + 1
                names += [f"beta[{fname},{label},{p}]" for p in self.canon.reduced_labels]
        for k in range(self.k):
            names += [f"sigma[{self.layout.names[k]},{p}]" for p in self.canon.reduced_labels]
        return names

    def _predictor_free(self, x: np.ndarray) -> np.ndarray:
        data = self.data
        f = np.tile(x[: self.l_free], (data.n_strata, 1))
        for k in range(self.k):
            off = self._beta_offsets[k]
            block = x[off: off + self.sizes[k] * self.l_free].reshape(self.sizes[k], self.l_free)
            f += block[data.levels[:, k]]
        return f

    def _value_and_grad(self, x: np.ndarray, want_grad: bool):
        data = self.data
        lf = self.l_free
        f_free = self._predictor_free(x)
        f = np.concatenate([f_free, np.zeros((data.n_strata, 1))], axis=1)
        fmax = f.max(axis=1)
        e = np.exp(f - fmax[:, None])
        se = e.sum(axis=1)
        lse = fmax + np.log(se)
        value = float((data.counts[:, :lf] * f_free).sum() - (data.row_totals * lse).sum())

        log_sigma = x[self._sigma_offset:].reshape(self.k, lf)
        sigma2 = np.exp(2 * log_sigma)
        alpha = x[:lf]
        value += -0.5 * float(alpha @ alpha)
        beta_blocks = []
        for k in range(self.k):
            off = self._beta_offsets[k]
            block = x[off: off + self.sizes[k] * lf].reshape(self.sizes[k], lf)
            beta_blocks.append(block)
            value += -0.5 * float((block ** 2 / sigma2[k]).sum())
            value += -self.sizes[k] * float(log_sigma[k].sum())
        # half-normal(1) on sigma plus the log-scale Jacobian
        value += -0.5 * float(np.exp(2 * log_sigma).sum()) + float(log_sigma.sum())

        if not want_grad:
            return value, None

        mu = e / se[:, None]
        g_f = data.counts[:, :lf] - data.row_totals[:, None] * mu[:, :lf]
        grad = np.empty_like(x)
        grad[:lf] = g_f.sum(axis=0) - alpha
        for k in range(self.k):
            off = self._beta_offsets[k]
            g_block = np.zeros((self.sizes[k], lf))
            np.add.at(g_block, data.levels[:, k], g_f)
            g_block -= beta_blocks[k] / sigma2[k]
            grad[off: off + self.sizes[k] * lf] = g_block.ravel()
        g_log_sigma = np.empty((self.k, lf))
        for k in range(self.k):
            g_log_sigma[k] = (beta_blocks[k] ** 2 / sigma2[k]).sum(axis=0) - self.sizes[k]
        g_log_sigma += -sigma2 + 1.0
        grad[self._sigma_offset:] = g_log_sigma.ravel()
        return value, grad

    def log_density(self, x: np.ndarray) -> float:
        return self._value_and_grad(np.asarray(x, dtype=float), want_grad=False)[0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self._value_and_grad(np.asarray(x, dtype=float), want_grad=True)[1]


def _stratum_row(stratum: Stratum, data: StratumData) -> np.ndarray:
    """Level-index row (one entry per factor) for a stratum under a layout."""
    try:
        prov = data.province_ids.index(stratum.province_id)
    except ValueError:
        raise InvalidStratumError(f"unknown province {stratum.province_id}") from None
    row = [prov]
    for f, code in enumerate(stratum.levels, start=1):
        if not 1 <= code <= data.layout.sizes[f]:
            raise InvalidStratumError(
                f"factor {data.layout.names[f]!r} level {code} outside "
                f"1..{data.layout.sizes[f]}"
            )
        row.append(code - 1)
    return np.array(row, dtype=int)


def linear_predictor(params: FundamentalParams, stratum: Stratum, data: StratumData) -> np.ndarray:
    """Per-party predictor alpha_l + sum_k beta_(k, level_k, l); pivot entry 0."""
    row = _stratum_row(stratum, data)
    f = params.alpha.copy()
    for k in range(data.layout.n_factors):
        f += params.betas[k][row[k]]
    return f


def stratum_probabilities(params: FundamentalParams, stratum: Stratum, data: StratumData) -> np.ndarray:
    """Vote probabilities of one stratum: softmax of the linear predictor."""
    return softmax(linear_predictor(params, stratum, data))


def log_posterior(params: FundamentalParams, data: StratumData) -> float:
    """Natural-space log posterior (no change-of-variables terms).

    Multinomial likelihood plus Gaussian priors on intercepts and level
    effects and half-normal(1) priors on the scales, up to a constant.
    """
    params.validate(data.layout, data.canon)
    target = FundamentalTarget(data)
    x = target.pack(params)
    value = target.log_density(x)
    # Remove the unconstrained-space Jacobian to report the natural density.
    return value - float(np.log(params.sigmas).sum())


@dataclass
class FundamentalPosterior:
    """Packed posterior draws plus provenance and diagnostics."""

    draws: np.ndarray           # (n_draws, dimension), chains stacked
    chain_index: np.ndarray     # chain id per draw
    target: FundamentalTarget
    config: SamplerConfig
    data_hash: str
    rhat_values: np.ndarray
    converged: bool
    divergence_rate: float
    inflation: float = 1.0

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def params(self, i: int) -> FundamentalParams:
        return self.target.unpack(self.draws[i])

    def parameter_names(self) -> list[str]:
        return self.target.parameter_names()


def fit_fundamental(data: StratumData, config: SamplerConfig) -> FundamentalPosterior:
    """Sample the survey model posterior; flags (never hides) non-convergence."""
    if data.counts.sum() <= 0:
        raise InvalidInputError("survey has no respondents with reported intention")
    target = FundamentalTarget(data)
    chains = hmc_sample(target, config)
    values = rhat(chains) if config.chains >= 2 else np.full(target.dimension, np.nan)
    converged = bool(np.all(values < 1.05)) and not chains.diagnostic_failure
    if not converged:
        warnings.warn(
            f"fundamental fit not converged: max rhat {np.nanmax(values):.3f}, "
            f"divergence rate {chains.divergence_rate:.1%}",
            UserWarning,
        )
    flat = chains.flat()
    chain_index = np.repeat(np.arange(chains.n_chains), chains.draws.shape[1])
    return FundamentalPosterior(
        draws=flat,
        chain_index=chain_index,
        target=target,
        config=config,
        data_hash=data.data_hash(),
        rhat_values=values,
        converged=converged,
        divergence_rate=chains.divergence_rate,
    )


def inflate_alpha(posterior: FundamentalPosterior, factor: float = 1.5) -> FundamentalPosterior:
    """Scale every intercept draw by ``factor`` to widen national uncertainty.

    Survey answers may not reflect ballot-box behaviour and opinion can
    move between fieldwork and the election; inflating the intercept draws
    flattens the implied national predictive while leaving the geographic
    structure (level effects) untouched.
    """
    if factor < 1.0:
        raise InvalidInputError(f"inflation factor must be >= 1, got {factor}")
    draws = posterior.draws.copy()
    draws[:, : posterior.target.l_free] *= factor
    return replace(posterior, draws=draws, inflation=posterior.inflation * factor)


def _province_shares(target: FundamentalTarget, x: np.ndarray) -> np.ndarray:
    """Post-stratified share matrix (provinces x parties) for one packed draw."""
    data = target.data
    f_free = target._predictor_free(x)
    f = np.concatenate([f_free, np.zeros((data.n_strata, 1))], axis=1)
    mu = softmax(f)
    shares = np.zeros((len(data.province_ids), data.canon.n_parties))
    np.add.at(shares, data.prov_idx, mu * data.weights[:, None])
    return shares


def poststratify(params: FundamentalParams, data: StratumData) -> np.ndarray:
    """Census-weighted average of stratum probabilities per province.

    Returns a (provinces x parties) matrix of valid share vectors, rows
    ordered like ``data.province_ids``.
    """
    params.validate(data.layout, data.canon)
    target = FundamentalTarget(data)
    return _province_shares(target, target.pack(params))


def simulate_local_results(posterior: FundamentalPosterior, s: int, seed: int = 0,
                           force: bool = False):
    """Draw S simulations of province-level shares from the posterior.

    If S exceeds the stored draw count the draws are resampled with
    replacement (never silently truncated); otherwise an evenly thinned,
    deterministic subset is used.  Importance weights are left unset.
    """
    from .synthesis import SimulationEnsemble

    if not posterior.converged and not force:
        raise NotConvergedError(
            "posterior flagged non-converged; pass force=True to simulate anyway"
        )
    if s < 1:
        raise InvalidInputError("need at least one simulation")
    n = posterior.n_draws
    if s > n:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=s)
        warnings.warn(f"requested {s} simulations from {n} draws; resampling with replacement")
    else:
        idx = np.floor(np.linspace(0, n - 1, s)).astype(int)

    data = posterior.target.data
    shares = np.empty((s, len(data.province_ids), data.canon.n_parties))
    for out_row, draw_row in enumerate(idx):
        shares[out_row] = _province_shares(posterior.target, posterior.draws[draw_row])
    weights = data.electorates / data.electorates.sum()
    national = np.einsum("sip,i->sp", shares, weights)
    return SimulationEnsemble(
        province_ids=list(data.province_ids),
        electorates=data.electorates.copy(),
        canon=data.canon,
        shares=shares,
        national=national,
        log_weights=None,
    )
