"""Posterior sampling, convergence diagnostics, and least squares.

The sampler is plain Hamiltonian Monte Carlo: leapfrog integration with
dual-averaging step-size adaptation during warmup and a diagonal mass
matrix estimated from warmup draws.  Targets are expected to live on an
unconstrained space (callers reparameterize scales on the log scale and
correlations through a Cholesky-based transform).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.linalg import solve_triangular

from .core import InvalidInputError, VotacastError


class ConfigurationError(InvalidInputError):
    """Sampler configuration is internally inconsistent."""


class InitializationError(VotacastError):
    """The target density is not finite at any attempted starting point."""


class InsufficientChainsError(InvalidInputError):
    """A between-chain diagnostic was asked of fewer than two chains."""


class SingularDesignError(InvalidInputError):
    """The regression design matrix is rank deficient."""


class DegenerateVarianceWarning(UserWarning):
    """Chains carry zero variance in some dimension; rhat is uninformative there."""


class DivergenceWarning(UserWarning):
    """Too many divergent trajectories after warmup."""


class LogDensityTarget(Protocol):
    """Anything with a dimension, a log density, and its gradient."""

    @property
    def dimension(self) -> int: ...

    def log_density(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 2000
    warmup_fraction: float = 0.5
    target_accept: float = 0.8
    seed: int = 0
    trajectory_length: float = 1.2
    max_leapfrog: int = 64

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigurationError("need at least one chain")
        if self.iterations < 2:
            raise ConfigurationError("need at least two iterations")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigurationError("warmup fraction must be in (0, 1)")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target acceptance must be in (0, 1)")

    @property
    def warmup(self) -> int:
        return int(self.iterations * self.warmup_fraction)

    @property
    def kept(self) -> int:
        kept = self.iterations - self.warmup
        if kept < 1:
            raise ConfigurationError("no post-warmup iterations left")
        return kept


@dataclass
class ChainSet:
    """Post-warmup draws from independent chains, plus run diagnostics.

    Only post-warmup draws are stored; the warmup count records what was
    discarded.
    """

    draws: np.ndarray          # (chains, kept, dimension)
    warmup: int
    seed: int
    accept_rates: np.ndarray   # per chain, post-warmup
    divergence_rate: float     # post-warmup, pooled over chains
    step_sizes: np.ndarray     # per chain, final adapted value
    mass_diag: np.ndarray      # shared shape (chains, dimension)
    diagnostic_failure: bool = False

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def dimension(self) -> int:
        return self.draws.shape[2]

    def flat(self) -> np.ndarray:
        """All post-warmup draws pooled, shape (chains * kept, dimension)."""
        return self.draws.reshape(-1, self.draws.shape[2])


def _leapfrog(x, p, eps, n_steps, grad, inv_mass, g=None):
    if g is None:
        g = grad(x)
    for _ in range(n_steps):
        p = p + 0.5 * eps * g
        x = x + eps * (inv_mass * p)
        g = grad(x)
        p = p + 0.5 * eps * g
    return x, p, g


def _find_initial_step(logp, grad, x0, inv_mass, rng):
    """Double/halve the step size until one leapfrog step has accept prob near 1/2."""
    eps = 1.0
    d = x0.shape[0]
    p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
    h0 = logp(x0) - 0.5 * np.dot(p0, inv_mass * p0)
    x1, p1, _ = _leapfrog(x0, p0, eps, 1, grad, inv_mass)
    h1 = logp(x1) - 0.5 * np.dot(p1, inv_mass * p1)
    log_ratio = h1 - h0
    if not np.isfinite(log_ratio):
        log_ratio = -np.inf
    direction = 1.0 if log_ratio > np.log(0.5) else -1.0
    for _ in range(100):
        eps = eps * 2.0 ** direction
        x1, p1, _ = _leapfrog(x0, p0, eps, 1, grad, inv_mass)
        h1 = logp(x1) - 0.5 * np.dot(p1, inv_mass * p1)
        log_ratio = h1 - h0
        if not np.isfinite(log_ratio):
            log_ratio = -np.inf
        if direction * log_ratio <= direction * np.log(0.5):
            break
    return min(max(eps, 1e-10), 1e3)


_DIVERGENCE_THRESHOLD = 1000.0  # energy error treated as a divergent trajectory


def _run_chain(target: LogDensityTarget, config: SamplerConfig, chain_index: int):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(chain_index,)))
    d = target.dimension
    logp = target.log_density
    grad = target.gradient

    x = None
    for _ in range(50):
        cand = 0.1 * rng.standard_normal(d)
        if np.isfinite(logp(cand)):
            x = cand
            break
    if x is None:
        raise InitializationError("could not find a finite-density starting point")

    warmup = config.warmup
    kept = config.kept
    inv_mass = np.ones(d)

    # Dual averaging state (re-initialized when the mass matrix updates).
    def fresh_da(eps0):
        return {"mu": np.log(10.0 * eps0), "log_eps_bar": 0.0, "h_bar": 0.0, "count": 0}

    eps = _find_initial_step(logp, grad, x, inv_mass, rng)
    da = fresh_da(eps)
    gamma, t0, kappa = 0.05, 10.0, 0.75

    mass_update_at = warmup // 2 if warmup >= 20 else None
    window: list[np.ndarray] = []

    draws = np.empty((kept, d))
    accepts = 0
    divergences = 0
    n_kept_seen = 0

    def n_steps_for(e):
        return int(min(max(1, round(config.trajectory_length / e)), config.max_leapfrog))

    logp_x = logp(x)
    grad_x = grad(x)
    for it in range(config.iterations):
        adapting = it < warmup
        eps_it = eps if adapting else eps * rng.uniform(0.9, 1.1)
        p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
        h0 = logp_x - 0.5 * np.dot(p0, inv_mass * p0)
        x1, p1, g1 = _leapfrog(x, p0, eps_it, n_steps_for(eps_it), grad, inv_mass, grad_x)
        logp_x1 = logp(x1)
        h1 = logp_x1 - 0.5 * np.dot(p1, inv_mass * p1)
        log_accept = h1 - h0
        divergent = (not np.isfinite(h1)) or (h0 - h1) > _DIVERGENCE_THRESHOLD
        if not np.isfinite(log_accept):
            log_accept = -np.inf
        alpha = min(1.0, np.exp(log_accept))
        if not divergent and np.log(rng.uniform()) < log_accept:
            x, logp_x, grad_x = x1, logp_x1, g1

        if adapting:
            da["count"] += 1
            m = da["count"]
            da["h_bar"] = (1 - 1 / (m + t0)) * da["h_bar"] + (config.target_accept - alpha) / (m + t0)
            log_eps = da["mu"] - np.sqrt(m) / gamma * da["h_bar"]
            eta = m ** (-kappa)
            da["log_eps_bar"] = eta * log_eps + (1 - eta) * da["log_eps_bar"]
            eps = float(np.exp(log_eps))
            if mass_update_at is not None and it >= mass_update_at // 2:
                window.append(x.copy())
            if mass_update_at is not None and it == mass_update_at:
                var = np.var(np.asarray(window), axis=0)
                n = len(window)
                # Stan-style regularization toward unit variance.
                inv_mass = (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3
                inv_mass = np.maximum(inv_mass, 1e-10)
                window.clear()
                eps = _find_initial_step(logp, grad, x, inv_mass, rng)
                da = fresh_da(eps)
            if it == warmup - 1:
                eps = float(np.exp(da["log_eps_bar"]))
        else:
            draws[n_kept_seen] = x
            n_kept_seen += 1
            accepts += alpha
            divergences += int(divergent)

    return draws, accepts / kept, divergences / kept, eps, inv_mass


def hmc_sample(target: LogDensityTarget, config: SamplerConfig) -> ChainSet:
    """Sample the target with HMC; returns post-warmup draws per chain.

    Raises :class:`ConfigurationError` on degenerate configs and
    :class:`InitializationError` if no finite starting point is found.
    A post-warmup divergence rate above 10% flags the result as a
    diagnostic failure rather than raising.
    """
    if target.dimension < 1:
        raise ConfigurationError("target dimension must be positive")
    kept = config.kept  # raises on zero post-warmup iterations

    all_draws = np.empty((config.chains, kept, target.dimension))
    accept_rates = np.empty(config.chains)
    step_sizes = np.empty(config.chains)
    divergence_rates = np.empty(config.chains)
    mass = np.empty((config.chains, target.dimension))
    for c in range(config.chains):
        draws, acc, div, eps, inv_mass = _run_chain(target, config, c)
        all_draws[c] = draws
        accept_rates[c] = acc
        divergence_rates[c] = div
        step_sizes[c] = eps
        mass[c] = inv_mass

    divergence_rate = float(divergence_rates.mean())
    failure = divergence_rate > 0.10
    if failure:
        warnings.warn(
            f"{divergence_rate:.1%} of post-warmup trajectories diverged", DivergenceWarning
        )
    return ChainSet(
        draws=all_draws,
        warmup=config.warmup,
        seed=config.seed,
        accept_rates=accept_rates,
        divergence_rate=divergence_rate,
        step_sizes=step_sizes,
        mass_diag=mass,
        diagnostic_failure=failure,
    )


def rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction factor, per dimension.

    Accepts a :class:`ChainSet` or a (chains, iterations, dimension)
    array.  Dimensions with zero within- and between-chain variance are
    reported as 1.0 with a :class:`DegenerateVarianceWarning`.
    """
    draws = chains.draws if isinstance(chains, ChainSet) else np.asarray(chains, dtype=float)
    if draws.ndim != 3:
        raise InvalidInputError("expected draws with shape (chains, iterations, dimension)")
    n_chains, n_iter, dim = draws.shape
    if n_chains < 2:
        raise InsufficientChainsError("rhat needs at least two chains")
    if n_iter < 4:
        raise InvalidInputError("rhat needs at least four draws per chain")

    half = n_iter // 2
    split = np.concatenate([draws[:, :half, :], draws[:, half: 2 * half, :]], axis=0)
    m, n = split.shape[0], split.shape[1]
    chain_means = split.mean(axis=1)            # (m, dim)
    chain_vars = split.var(axis=1, ddof=1)      # (m, dim)
    w = chain_vars.mean(axis=0)
    b = n * chain_means.var(axis=0, ddof=1)
    degenerate = w <= 0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} dimension(s) have zero within-chain variance",
            DegenerateVarianceWarning,
        )
    var_plus = (n - 1) / n * w + b / n
    out = np.ones(dim)
    ok = ~degenerate
    out[ok] = np.sqrt(var_plus[ok] / w[ok])
    return np.maximum(out, 1.0)


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


def ols_fit(design, response) -> OlsFit:
    """Least squares via a QR factorization of the design matrix.

    Raises :class:`SingularDesignError` naming the offending columns when
    the design is rank deficient.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2:
        raise InvalidInputError("design must be a 2-d matrix")
    n, p = x.shape
    if y.shape != (n,):
        raise InvalidInputError(f"response must have shape ({n},), got {y.shape}")
    if n < p:
        raise InvalidInputError(f"need at least as many rows ({n}) as columns ({p})")

    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    scale = np.linalg.norm(x, axis=0)
    scale[scale == 0] = 1.0
    bad = np.flatnonzero(diag < 1e-10 * np.maximum(scale, 1.0))
    if bad.size:
        raise SingularDesignError(f"design is rank deficient in column(s) {bad.tolist()}")
    beta = solve_triangular(r, q.T @ y)
    fitted = x @ beta
    return OlsFit(coefficients=beta, residuals=y - fitted, fitted=fitted)


def check_gradient(
    target: LogDensityTarget,
    points: np.ndarray,
    h: float = 1e-5,
    rtol: float = 1e-5,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Raises AssertionError when the worst point exceeds ``rtol``.
    """
    worst = 0.0
    for x in np.atleast_2d(points):
        analytic = target.gradient(x)
        numeric = np.empty_like(analytic)
        for i in range(x.shape[0]):
            e = np.zeros_like(x)
            e[i] = h
            numeric[i] = (target.log_density(x + e) - target.log_density(x - e)) / (2 * h)
        denom = max(np.linalg.norm(analytic), 1e-8)
        err = np.linalg.norm(analytic - numeric) / denom
        worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(f"gradient mismatch: relative error {worst:.3e} > {rtol:.1e}")
    return worst
