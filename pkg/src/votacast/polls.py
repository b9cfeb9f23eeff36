"""Multilevel poll-error model: house effects, election effects, trends.

A poll's error against the eventual result decomposes into a pollster
bias (gamma), an election-wide bias (delta), a per-day linear trend
(epsilon, vanishing on election day) and idiosyncratic noise with a
per-pollster covariance.  Effects across parties are correlated; all
vectors live in the pivot-dropped space of dimension L-1, which keeps
the Gaussians non-degenerate.

Integrating the effects out turns the model into a joint Gaussian over
all polls whose covariance is assembled block-wise from indicator
algebra (same election, same pollster, same poll).  That marginal form
scores candidate election results and, under a flat prior, inverts into
a Gaussian predictive for the result itself.

Covariance matrices are parameterized for sampling as log scales plus
canonical partial correlations (tanh of unconstrained reals), with the
correlation prior a Lewandowski-Kurowicka-Joe shape of concentration 2
expressed directly in partial-correlation space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .core import (
    InvalidInputError,
    PartyCanon,
    VotacastError,
    lift_shares,
    reduce_shares,
    validate_cov_matrix,
)
from .inference import SamplerConfig, hmc_sample, rhat


class UnknownIdError(InvalidInputError):
    """A poll refers to a pollster or election the parameters do not know."""


class ModelMisconfigurationError(VotacastError):
    """An assembled covariance is broken beyond a tiny jitter repair."""


class NumericalError(VotacastError):
    """A covariance became numerically singular during evaluation."""


class ConfoundingWarning(UserWarning):
    """House and election effects cannot be separated by the training set."""


class DegeneratePredictiveWarning(UserWarning):
    """Most flat-prior predictive draws fell outside the simplex."""


_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Poll:
    """One published poll.

    ``shares`` has one entry per canon party; parties absent from the
    ballot of that election are NaN (masked).  ``days_before`` counts days
    between publication and election day.
    """

    poll_id: str
    pollster_id: str
    election_id: str
    days_before: int
    shares: np.ndarray
    sample_size: int | None = None

    def __post_init__(self):
        shares = np.asarray(self.shares, dtype=float)
        object.__setattr__(self, "shares", shares)
        if self.days_before < 0:
            raise InvalidInputError(f"poll {self.poll_id}: days_before must be >= 0")
        active = shares[~np.isnan(shares)]
        if active.size == 0:
            raise InvalidInputError(f"poll {self.poll_id}: all parties masked")
        if np.any(active < -1e-9) or active.sum() > 1.0 + 1e-9:
            raise InvalidInputError(
                f"poll {self.poll_id}: unmasked shares must form a sub-simplex"
            )


@dataclass
class PollsParams:
    """Natural-space effects and covariances, keyed by pollster/election id."""

    gamma: dict[str, np.ndarray]
    delta: dict[str, np.ndarray]
    eps: dict[str, np.ndarray]
    sigma_j: dict[str, np.ndarray]
    sigma_gamma: np.ndarray
    sigma_delta: np.ndarray
    sigma_eps: np.ndarray


def poll_error_mean(params: PollsParams, poll: Poll, allow_new: bool = False) -> np.ndarray:
    """Expected poll error gamma_j + delta_t + days * eps_t (reduced space)."""
    zero = np.zeros_like(params.sigma_gamma[:, 0])
    if poll.pollster_id in params.gamma:
        g = params.gamma[poll.pollster_id]
    elif allow_new:
        g = zero
    else:
        raise UnknownIdError(f"unknown pollster {poll.pollster_id!r}")
    if poll.election_id in params.delta:
        d, e = params.delta[poll.election_id], params.eps[poll.election_id]
    elif allow_new:
        d, e = zero, zero
    else:
        raise UnknownIdError(f"unknown election {poll.election_id!r}")
    return g + d + poll.days_before * e


# ---------------------------------------------------------------------------
# Covariance transform: log scales + canonical partial correlations.
# ---------------------------------------------------------------------------

class CovTransform:
    """Bijection between R^(d + d(d-1)/2) and covariance matrices.

    sigma = tau * exp(u) and the correlation Cholesky factor is built out
    of partial correlations tanh(z).  The prior density (half-normal on
    scales, concentration-eta correlation prior) and its gradient are
    expressed directly in the unconstrained coordinates, change of
    variables included.
    """

    def __init__(self, d: int, tau: float = 0.05, eta: float = 2.0):
        self.d = d
        self.tau = tau
        self.eta = eta
        self.n_cpc = d * (d - 1) // 2
        self.n_params = d + self.n_cpc
        rows, cols = np.tril_indices(d, k=-1)
        self._rows, self._cols = rows, cols
        # Partial-correlation Beta shape per column, giving the LKJ(eta) law.
        self._beta_shape = eta + (d - 2 - cols) / 2.0

    def build(self, u: np.ndarray, z: np.ndarray) -> dict:
        d = self.d
        sigma = self.tau * np.exp(u)
        r = np.zeros((d, d))
        r[self._rows, self._cols] = np.tanh(z)
        c = np.sqrt(1.0 - r ** 2)
        w = np.zeros((d, d))
        p = np.zeros((d, d))
        for i in range(d):
            p[i, 0] = 1.0
            for j in range(1, i + 1):
                p[i, j] = p[i, j - 1] * c[i, j - 1]
            w[i, :i] = r[i, :i] * p[i, :i]
            w[i, i] = p[i, i]
        chol_factor = sigma[:, None] * w
        cov = chol_factor @ chol_factor.T
        return {"sigma": sigma, "r": r, "w": w, "p": p, "chol": chol_factor, "cov": cov}

    def inverse(self, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unconstrained coordinates of a given covariance matrix."""
        validate_cov_matrix(cov)
        sigma = np.sqrt(np.diag(cov))
        if np.any(sigma <= 0):
            raise InvalidInputError("covariance has zero diagonal; not representable")
        corr = cov / np.outer(sigma, sigma)
        w = cholesky(corr + 1e-14 * np.eye(self.d), lower=True)
        r = np.zeros((self.d, self.d))
        for i in range(1, self.d):
            prod = 1.0
            for j in range(i):
                r[i, j] = w[i, j] / prod
                r[i, j] = np.clip(r[i, j], -1 + 1e-12, 1 - 1e-12)
                prod *= np.sqrt(1.0 - r[i, j] ** 2)
        u = np.log(sigma / self.tau)
        z = np.arctanh(r[self._rows, self._cols])
        return u, z

    def log_prior(self, u: np.ndarray, z: np.ndarray) -> float:
        sigma_sq_scaled = np.exp(2.0 * u)          # (sigma / tau)^2
        value = float((-0.5 * sigma_sq_scaled + u).sum())  # half-normal + Jacobian
        r = np.tanh(z)
        value += float((self._beta_shape * np.log1p(-r ** 2)).sum())
        return value

    def log_prior_grad(self, u: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g_u = -np.exp(2.0 * u) + 1.0
        g_z = -2.0 * self._beta_shape * np.tanh(z)
        return g_u, g_z

    def chain_grad(self, state: dict, g_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pull a symmetric d/dSigma gradient back to (u, z) coordinates."""
        d = self.d
        sigma, w, p, r = state["sigma"], state["w"], state["p"], state["r"]
        corr = w @ w.T
        g_sigma = 2.0 * np.einsum("ab,b,ba->a", g_cov, sigma, corr)
        g_u = g_sigma * sigma
        h = sigma[:, None] * g_cov * sigma[None, :]
        m = 2.0 * h @ w
        mw = m * w
        tails = np.cumsum(mw[:, ::-1], axis=1)[:, ::-1]  # tails[i, j] = sum_{j' >= j} mw[i, j']
        g_z = np.empty(self.n_cpc)
        for idx, (i, j) in enumerate(zip(self._rows, self._cols)):
            tail = tails[i, j + 1] if j + 1 < d else 0.0
            g_z[idx] = m[i, j] * p[i, j] * (1.0 - r[i, j] ** 2) - r[i, j] * tail
        return g_u, g_z


# ---------------------------------------------------------------------------
# Marginal (effects integrated out) mean and covariance: the GP form.
# ---------------------------------------------------------------------------

def _reduced_masked(values: np.ndarray, canon: PartyCanon) -> tuple[np.ndarray, np.ndarray]:
    """Reduced vector and active-dimension mask from a full per-party array."""
    v = np.asarray(values, dtype=float)
    if v.shape != (canon.n_parties,):
        raise InvalidInputError(f"expected {canon.n_parties} per-party entries, got {v.shape}")
    red = v[:-1]
    mask = ~np.isnan(red)
    return red, mask


def marginal_mean_cov(
    polls: Sequence[Poll],
    results: Mapping[str, np.ndarray],
    sigma_gamma: np.ndarray,
    sigma_delta: np.ndarray,
    sigma_eps: np.ndarray,
    sigma_j: Mapping[str, np.ndarray],
    canon: PartyCanon,
    jitter: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked mean and covariance of all polls given per-election results.

    Block (k, k') of the covariance is
    ``1[t=t'] (S_delta + d_k d_k' S_eps) + 1[j=j'] S_gamma + 1[k=k'] S_j``
    with masked party dimensions dropped row- and column-wise.
    """
    for c in (sigma_gamma, sigma_delta, sigma_eps, *sigma_j.values()):
        validate_cov_matrix(c)
    masks = []
    means = []
    for poll in polls:
        if poll.election_id not in results:
            raise UnknownIdError(f"no result supplied for election {poll.election_id!r}")
        if poll.pollster_id not in sigma_j:
            raise UnknownIdError(f"no noise covariance for pollster {poll.pollster_id!r}")
        red, mask = _reduced_masked(results[poll.election_id], canon)
        masks.append(np.flatnonzero(mask))
        means.append(red[mask])
    offsets = np.concatenate([[0], np.cumsum([m.size for m in masks])])
    total = offsets[-1]
    mean = np.concatenate(means) if total else np.empty(0)
    cov = np.zeros((total, total))
    for a, pa in enumerate(polls):
        ia = slice(offsets[a], offsets[a + 1])
        ma = masks[a]
        for b, pb in enumerate(polls):
            ib = slice(offsets[b], offsets[b + 1])
            mb = masks[b]
            block = np.zeros((ma.size, mb.size))
            if pa.election_id == pb.election_id:
                block += (sigma_delta + pa.days_before * pb.days_before * sigma_eps)[
                    np.ix_(ma, mb)
                ]
            if pa.pollster_id == pb.pollster_id:
                block += sigma_gamma[np.ix_(ma, mb)]
            if a == b:
                block += sigma_j[pa.pollster_id][np.ix_(ma, mb)]
            cov[ia, ib] = block
    cov = 0.5 * (cov + cov.T)
    if total:
        smallest = np.linalg.eigvalsh(cov)[0]
        if smallest < -1e-10:
            if smallest >= -jitter:
                cov = cov + (-smallest + 1e-12) * np.eye(total)
            else:
                raise ModelMisconfigurationError(
                    f"assembled covariance has eigenvalue {smallest:.3e}, "
                    f"beyond jitter repair {jitter:g}"
                )
    return mean, cov


def log_lik_polls(
    polls: Sequence[Poll],
    results: Mapping[str, np.ndarray],
    sigma_gamma: np.ndarray,
    sigma_delta: np.ndarray,
    sigma_eps: np.ndarray,
    sigma_j: Mapping[str, np.ndarray],
    canon: PartyCanon,
) -> float:
    """Gaussian-process log likelihood of the stacked polls at the results."""
    mean, cov = marginal_mean_cov(
        polls, results, sigma_gamma, sigma_delta, sigma_eps, sigma_j, canon
    )
    obs = []
    for poll in polls:
        red, mask = _reduced_masked(results[poll.election_id], canon)
        p_red = poll.shares[:-1]
        if np.any(np.isnan(p_red[mask])):
            raise InvalidInputError(
                f"poll {poll.poll_id} is missing shares for active parties"
            )
        obs.append(p_red[mask])
    y = np.concatenate(obs) if obs else np.empty(0)
    try:
        chol_factor = cholesky(cov + 1e-12 * np.eye(cov.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(cov)
        raise NumericalError(
            f"marginal covariance is singular after masking (condition number {cond:.3e})"
        ) from None
    q = solve_triangular(chol_factor, y - mean, lower=True)
    return float(
        -0.5 * q @ q - np.log(np.diag(chol_factor)).sum() - 0.5 * y.size * _LOG_2PI
    )

# ---------------------------------------------------------------------------
# Hierarchical posterior: explicit effects sampled jointly with covariances.
# ---------------------------------------------------------------------------

class PollsTarget:
    """Unconstrained log posterior of the poll-error model, with gradient.

    Packing order: gamma (pollsters x d), delta (elections x d), eps
    (elections x d), then covariance blocks (effects hyper-covariances
    followed by per-pollster noise covariances), each as log scales plus
    partial correlations.
    """

    def __init__(
        self,
        polls: Sequence[Poll],
        results: Mapping[str, np.ndarray],
        canon: PartyCanon,
        tau: float = 0.05,
        eta: float = 2.0,
    ):
        if not polls:
            raise InvalidInputError("no training polls supplied")
        self.canon = canon
        self.d = canon.reduced_dim
        self.pollster_ids = sorted({p.pollster_id for p in polls})
        self.election_ids = sorted({p.election_id for p in polls})
        missing = [t for t in self.election_ids if t not in results]
        if missing:
            raise UnknownIdError(f"training elections without results: {missing}")
        self.transform = CovTransform(self.d, tau=tau, eta=eta)
        j_index = {j: i for i, j in enumerate(self.pollster_ids)}
        t_index = {t: i for i, t in enumerate(self.election_ids)}

        self.masks = {}
        reduced_results = {}
        for t in self.election_ids:
            red, mask = _reduced_masked(results[t], canon)
            self.masks[t] = np.flatnonzero(mask)
            reduced_results[t] = red

        # Group polls by (pollster, election-mask signature): one noise
        # covariance Cholesky per group and per evaluation.
        groups: dict[tuple[int, tuple], dict] = {}
        for poll in polls:
            mask = self.masks[poll.election_id]
            p_red = poll.shares[: self.d]
            if np.any(np.isnan(p_red[mask])):
                raise InvalidInputError(
                    f"poll {poll.poll_id} lacks shares for parties on the ballot"
                )
            err = p_red[mask] - reduced_results[poll.election_id][mask]
            key = (j_index[poll.pollster_id], tuple(mask.tolist()))
            g = groups.setdefault(key, {"errors": [], "t_idx": [], "days": []})
            g["errors"].append(err)
            g["t_idx"].append(t_index[poll.election_id])
            g["days"].append(float(poll.days_before))
        self.groups = [
            {
                "j": key[0],
                "mask": np.array(key[1], dtype=int),
                "errors": np.asarray(g["errors"]),
                "t_idx": np.asarray(g["t_idx"], dtype=int),
                "days": np.asarray(g["days"]),
            }
            for key, g in sorted(groups.items())
        ]
        self.n_polls = len(polls)

        self.n_pollsters = len(self.pollster_ids)
        self.n_elections = len(self.election_ids)
        d, m = self.d, self.transform.n_cpc
        self._gamma_off = 0
        self._delta_off = self.n_pollsters * d
        self._eps_off = self._delta_off + self.n_elections * d
        self._cov_off = self._eps_off + self.n_elections * d
        self._cov_size = d + m
        self.n_cov_blocks = 3 + self.n_pollsters
        self._dim = self._cov_off + self.n_cov_blocks * self._cov_size

    @property
    def dimension(self) -> int:
        return self._dim

    # -- packing ------------------------------------------------------------

    def _split(self, x: np.ndarray):
        d = self.d
        gamma = x[self._gamma_off: self._delta_off].reshape(self.n_pollsters, d)
        delta = x[self._delta_off: self._eps_off].reshape(self.n_elections, d)
        eps = x[self._eps_off: self._cov_off].reshape(self.n_elections, d)
        covs = []
        for b in range(self.n_cov_blocks):
            off = self._cov_off + b * self._cov_size
            covs.append((x[off: off + d], x[off + d: off + self._cov_size]))
        return gamma, delta, eps, covs

    def pack(self, params: PollsParams) -> np.ndarray:
        x = np.empty(self._dim)
        d = self.d
        for i, j in enumerate(self.pollster_ids):
            x[self._gamma_off + i * d: self._gamma_off + (i + 1) * d] = params.gamma[j]
        for i, t in enumerate(self.election_ids):
            x[self._delta_off + i * d: self._delta_off + (i + 1) * d] = params.delta[t]
            x[self._eps_off + i * d: self._eps_off + (i + 1) * d] = params.eps[t]
        blocks = [params.sigma_gamma, params.sigma_delta, params.sigma_eps]
        blocks += [params.sigma_j[j] for j in self.pollster_ids]
        for b, cov in enumerate(blocks):
            u, z = self.transform.inverse(cov)
            off = self._cov_off + b * self._cov_size
            x[off: off + d] = u
            x[off + d: off + self._cov_size] = z
        return x

    def unpack(self, x: np.ndarray) -> PollsParams:
        gamma, delta, eps, covs = self._split(np.asarray(x, dtype=float))
        mats = [self.transform.build(u, z)["cov"] for u, z in covs]
        return PollsParams(
            gamma={j: gamma[i].copy() for i, j in enumerate(self.pollster_ids)},
            delta={t: delta[i].copy() for i, t in enumerate(self.election_ids)},
            eps={t: eps[i].copy() for i, t in enumerate(self.election_ids)},
            sigma_gamma=mats[0],
            sigma_delta=mats[1],
            sigma_eps=mats[2],
            sigma_j={j: mats[3 + i] for i, j in enumerate(self.pollster_ids)},
        )

    def parameter_names(self) -> list[str]:
        parties = self.canon.reduced_labels
        names = [f"gamma[{j},{p}]" for j in self.pollster_ids for p in parties]
        names += [f"delta[{t},{p}]" for t in self.election_ids for p in parties]
        names += [f"eps[{t},{p}]" for t in self.election_ids for p in parties]
        cpcs = list(zip(*np.tril_indices(self.d, k=-1)))
        for label in ["gamma", "delta", "eps"] + [f"noise_{j}" for j in self.pollster_ids]:
            names += [f"cov_{label}.log_scale[{p}]" for p in parties]
            names += [f"cov_{label}.cpc[{int(i)},{int(j)}]" for i, j in cpcs]
        return names

    # -- density ------------------------------------------------------------

    def _value_and_grad(self, x: np.ndarray, want_grad: bool):
        d = self.d
        gamma, delta, eps, covs = self._split(x)
        states = [self.transform.build(u, z) for u, z in covs]
        g_state = states[0]   # gamma hyper-covariance
        d_state = states[1]   # delta hyper-covariance
        e_state = states[2]   # eps hyper-covariance
        j_states = states[3:]

        value = 0.0
        grad = np.zeros_like(x) if want_grad else None
        g_gamma = np.zeros_like(gamma) if want_grad else None
        g_delta = np.zeros_like(delta) if want_grad else None
        g_eps = np.zeros_like(eps) if want_grad else None
        g_cov = [np.zeros((d, d)) for _ in range(self.n_cov_blocks)] if want_grad else None

        # Likelihood: polls grouped by pollster and mask.
        for group in self.groups:
            j = group["j"]
            mask = group["mask"]
            sub = j_states[j]["cov"][np.ix_(mask, mask)]
            try:
                l_sub = cholesky(sub + 1e-12 * np.eye(mask.size), lower=True)
            except np.linalg.LinAlgError:
                return -np.inf, (np.zeros_like(x) if want_grad else None)
            means = gamma[j][mask] + delta[group["t_idx"]][:, mask] \
                + group["days"][:, None] * eps[group["t_idx"]][:, mask]
            resid = group["errors"] - means
            q = solve_triangular(l_sub, resid.T, lower=True)
            n_g = resid.shape[0]
            value += (
                -0.5 * float((q ** 2).sum())
                - n_g * float(np.log(np.diag(l_sub)).sum())
                - 0.5 * n_g * mask.size * _LOG_2PI
            )
            if want_grad:
                qq = solve_triangular(l_sub.T, q, lower=False).T  # rows: Sigma^-1 resid
                np.add.at(g_gamma, (j, mask), qq.sum(axis=0))
                np.add.at(g_delta, (group["t_idx"][:, None], mask[None, :]), qq)
                np.add.at(g_eps, (group["t_idx"][:, None], mask[None, :]),
                          group["days"][:, None] * qq)
                inv_sub = cho_solve((l_sub, True), np.eye(mask.size))
                g_sub = 0.5 * (qq.T @ qq - n_g * inv_sub)
                g_cov[3 + j][np.ix_(mask, mask)] += g_sub

        # Priors on the effects given their hyper-covariances.
        for block, effects, state in (
            (0, gamma, g_state),
            (1, delta, d_state),
            (2, eps, e_state),
        ):
            try:
                l_full = cholesky(state["cov"] + 1e-12 * np.eye(d), lower=True)
            except np.linalg.LinAlgError:
                return -np.inf, (np.zeros_like(x) if want_grad else None)
            q = solve_triangular(l_full, effects.T, lower=True)
            n_e = effects.shape[0]
            value += (
                -0.5 * float((q ** 2).sum())
                - n_e * float(np.log(np.diag(l_full)).sum())
                - 0.5 * n_e * d * _LOG_2PI
            )
            if want_grad:
                pp = solve_triangular(l_full.T, q, lower=False).T
                inv_full = cho_solve((l_full, True), np.eye(d))
                g_block = 0.5 * (pp.T @ pp - n_e * inv_full)
                g_cov[block] += g_block
                g_eff = -pp
                if block == 0:
                    g_gamma += g_eff
                elif block == 1:
                    g_delta += g_eff
                else:
                    g_eps += g_eff

        # Hyper-priors on all covariance blocks.
        for b, (u, z) in enumerate(covs):
            value += self.transform.log_prior(u, z)

        if not want_grad:
            return value, None

        grad[self._gamma_off: self._delta_off] = g_gamma.ravel()
        grad[self._delta_off: self._eps_off] = g_delta.ravel()
        grad[self._eps_off: self._cov_off] = g_eps.ravel()
        for b, (u, z) in enumerate(covs):
            gu, gz = self.transform.chain_grad(states[b], g_cov[b])
            pu, pz = self.transform.log_prior_grad(u, z)
            off = self._cov_off + b * self._cov_size
            grad[off: off + d] = gu + pu
            grad[off + d: off + self._cov_size] = gz + pz
        return value, grad

    def log_density(self, x: np.ndarray) -> float:
        return self._value_and_grad(np.asarray(x, dtype=float), want_grad=False)[0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self._value_and_grad(np.asarray(x, dtype=float), want_grad=True)[1]

@dataclass
class PollsPosterior:
    """Packed posterior draws of the poll-error model plus provenance."""

    draws: np.ndarray          # (n_draws, dimension)
    chain_index: np.ndarray
    target: PollsTarget
    config: SamplerConfig | None
    rhat_values: np.ndarray
    converged: bool
    divergence_rate: float
    training: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def canon(self) -> PartyCanon:
        return self.target.canon

    def params(self, i: int) -> PollsParams:
        return self.target.unpack(self.draws[i])

    def parameter_names(self) -> list[str]:
        return self.target.parameter_names()

    def thinned_indices(self, n: int) -> np.ndarray:
        n = min(n, self.n_draws)
        return np.floor(np.linspace(0, self.n_draws - 1, n)).astype(int)

    @classmethod
    def from_params(
        cls,
        params_list: Sequence[PollsParams],
        polls: Sequence[Poll],
        results: Mapping[str, np.ndarray],
        canon: PartyCanon,
    ) -> "PollsPosterior":
        """Build a degenerate posterior from explicit parameter draws (tests)."""
        target = PollsTarget(polls, results, canon)
        draws = np.stack([target.pack(p) for p in params_list])
        return cls(
            draws=draws,
            chain_index=np.zeros(len(params_list), dtype=int),
            target=target,
            config=None,
            rhat_values=np.full(target.dimension, np.nan),
            converged=True,
            divergence_rate=0.0,
        )


def fit_polls(
    polls: Sequence[Poll],
    results: Mapping[str, np.ndarray],
    config: SamplerConfig,
    canon: PartyCanon,
    tau: float = 0.05,
    eta: float = 2.0,
    pollster_universe: Sequence[str] | None = None,
) -> PollsPosterior:
    """Sample the hierarchical poll-error posterior on historical polls.

    Every training poll's election must have a known result.  Pollsters
    declared in ``pollster_universe`` but absent from the polls are
    excluded with a warning; a single-election training set leaves house
    and election effects confounded, which is warned about but not fatal.
    """
    present = {p.pollster_id for p in polls}
    if pollster_universe is not None:
        idle = sorted(set(pollster_universe) - present)
        if idle:
            warnings.warn(f"pollsters with no training polls excluded: {idle}")
    if len({p.election_id for p in polls}) == 1:
        warnings.warn(
            "single training election: house and election effects are confounded",
            ConfoundingWarning,
        )
    target = PollsTarget(polls, results, canon, tau=tau, eta=eta)
    chains = hmc_sample(target, config)
    values = rhat(chains) if config.chains >= 2 else np.full(target.dimension, np.nan)
    converged = bool(np.all(values < 1.05)) and not chains.diagnostic_failure
    if not converged:
        warnings.warn(
            f"polls fit not converged: max rhat {np.nanmax(values):.3f}, "
            f"divergence rate {chains.divergence_rate:.1%}",
            UserWarning,
        )
    flat = chains.flat()
    return PollsPosterior(
        draws=flat,
        chain_index=np.repeat(np.arange(chains.n_chains), chains.draws.shape[1]),
        target=target,
        config=config,
        rhat_values=values,
        converged=converged,
        divergence_rate=chains.divergence_rate,
        training={
            "n_polls": len(polls),
            "elections": list(target.election_ids),
            "pollsters": list(target.pollster_ids),
        },
    )


# ---------------------------------------------------------------------------
# Scoring a hypothesized result against a new election's polls.
# ---------------------------------------------------------------------------

class PollsEvaluator:
    """Precomputed per-draw Gaussian factors for scoring result hypotheses.

    For each thinned posterior draw the new-election covariance (delta and
    trend effects integrated over their priors, house effects fixed where
    the pollster is known, integrated over the house prior where not) is
    factorized once; scoring any hypothesis v is then a cheap whitened
    residual norm.  Log densities across draws combine by a max-shifted
    log-mean-exp.
    """

    def __init__(self, new_polls: Sequence[Poll], posterior: PollsPosterior,
                 n_hyper_draws: int = 100):
        if not new_polls:
            raise InvalidInputError("no polls supplied for the new election")
        elections = {p.election_id for p in new_polls}
        if len(elections) != 1:
            raise InvalidInputError(f"new polls span several elections: {sorted(elections)}")
        self.election_id = elections.pop()
        self.canon = posterior.canon
        d = self.canon.reduced_dim
        masks = {tuple(np.flatnonzero(~np.isnan(p.shares[:d]))) for p in new_polls}
        if len(masks) != 1:
            raise InvalidInputError("new polls disagree on which parties are reported")
        self.mask = np.array(masks.pop(), dtype=int)
        if self.mask.size == 0:
            raise InvalidInputError("new polls mask out every party")
        self.polls = list(new_polls)
        self.posterior = posterior

        known = set(posterior.target.pollster_ids)
        self.unseen = sorted({p.pollster_id for p in new_polls} - known)

        dm = self.mask.size
        n = len(self.polls)
        y = np.concatenate([p.shares[:d][self.mask] for p in self.polls])
        days = np.array([float(p.days_before) for p in self.polls])
        self._factors = []
        for draw in posterior.thinned_indices(n_hyper_draws):
            params = posterior.params(int(draw))
            sd = params.sigma_delta[np.ix_(self.mask, self.mask)]
            se = params.sigma_eps[np.ix_(self.mask, self.mask)]
            sg = params.sigma_gamma[np.ix_(self.mask, self.mask)]
            pool = np.mean([params.sigma_j[j] for j in posterior.target.pollster_ids], axis=0)
            offset = np.zeros(n * dm)
            cov = np.zeros((n * dm, n * dm))
            for a, pa in enumerate(self.polls):
                ia = slice(a * dm, (a + 1) * dm)
                if pa.pollster_id in params.gamma:
                    offset[ia] = params.gamma[pa.pollster_id][self.mask]
                    own = params.sigma_j[pa.pollster_id][np.ix_(self.mask, self.mask)]
                else:
                    own = pool[np.ix_(self.mask, self.mask)]
                for b, pb in enumerate(self.polls):
                    ib = slice(b * dm, (b + 1) * dm)
                    block = sd + days[a] * days[b] * se
                    if (
                        pa.pollster_id == pb.pollster_id
                        and pa.pollster_id not in params.gamma
                    ):
                        block = block + sg
                    if a == b:
                        block = block + own
                    cov[ia, ib] += block
            cov = 0.5 * (cov + cov.T)
            try:
                l_cov = cholesky(cov + 1e-10 * np.eye(cov.shape[0]), lower=True)
            except np.linalg.LinAlgError:
                cond = np.linalg.cond(cov)
                raise NumericalError(
                    f"new-poll covariance singular (condition number {cond:.3e})"
                ) from None
            design = np.tile(np.eye(d)[self.mask, :], (n, 1))
            a_mat = solve_triangular(l_cov, design, lower=True)
            b_vec = solve_triangular(l_cov, y - offset, lower=True)
            c0 = -float(np.log(np.diag(l_cov)).sum()) - 0.5 * y.size * _LOG_2PI
            self._factors.append((a_mat, b_vec, c0))

    def log_density_batch(self, v_reduced: np.ndarray) -> np.ndarray:
        """Log predictive density of the polls at each hypothesis row."""
        vs = np.atleast_2d(np.asarray(v_reduced, dtype=float))
        per_draw = np.empty((len(self._factors), vs.shape[0]))
        for h, (a_mat, b_vec, c0) in enumerate(self._factors):
            resid = b_vec[None, :] - vs @ a_mat.T
            per_draw[h] = -0.5 * (resid ** 2).sum(axis=1) + c0
        shift = per_draw.max(axis=0)
        return shift + np.log(np.mean(np.exp(per_draw - shift[None, :]), axis=0))

    def log_density(self, v_full: np.ndarray) -> float:
        red = reduce_shares(v_full, self.canon)
        return float(self.log_density_batch(red[None, :])[0])

    def predictive_draws(self, s: int, seed: int = 0) -> tuple[np.ndarray, int]:
        """Flat-prior Gaussian predictive draws of the full share vector.

        Per hyper draw the conditional is exact generalized least squares;
        draws landing off the simplex are rejected and redrawn.  Returns
        the draws and the rejection count.
        """
        rng = np.random.default_rng(seed)
        d = self.canon.reduced_dim
        n_factors = len(self._factors)
        gls = []
        for a_mat, b_vec, _ in self._factors:
            vcov = np.linalg.inv(a_mat.T @ a_mat)
            vmean = vcov @ a_mat.T @ b_vec
            gls.append((vmean, np.linalg.cholesky(0.5 * (vcov + vcov.T))))
        out = np.empty((s, d + 1))
        rejected = 0
        for i in range(s):
            vmean, l_v = gls[i % n_factors]
            for attempt in range(1000):
                red = vmean + l_v @ rng.standard_normal(d)
                total = red.sum()
                if np.all(red >= 0) and total <= 1.0 and np.all(red <= 1.0):
                    out[i] = lift_shares(red, self.canon)
                    break
                rejected += 1
            else:
                raise NumericalError(
                    "flat-prior predictive rejected 1000 straight draws; "
                    "poll scale is incompatible with the simplex"
                )
        if rejected > s:
            warnings.warn(
                f"flat-prior predictive rejected {rejected} draws for {s} kept "
                "(> 50% rejection)",
                DegeneratePredictiveWarning,
            )
        return out, rejected


def polls_likelihood_at(
    v: np.ndarray,
    new_polls: Sequence[Poll],
    posterior: PollsPosterior,
    n_hyper_draws: int = 100,
) -> float:
    """Log Prob[new polls | hypothesized result v], averaged over hyper draws."""
    return PollsEvaluator(new_polls, posterior, n_hyper_draws).log_density(v)


def predictive_flat_prior(
    new_polls: Sequence[Poll],
    posterior: PollsPosterior,
    s: int,
    n_hyper_draws: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """S draws of the national share vector under the flat-prior inversion."""
    if s < 1:
        raise InvalidInputError("need at least one draw")
    evaluator = PollsEvaluator(new_polls, posterior, n_hyper_draws)
    draws, _ = evaluator.predictive_draws(s, seed=seed)
    return draws
