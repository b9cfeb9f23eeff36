import numpy as np
import pytest

from votacast.inference import (
    ChainSet,
    ConfigurationError,
    DegenerateVarianceWarning,
    InsufficientChainsError,
    OlsFit,
    SamplerConfig,
    SingularDesignError,
    check_gradient,
    hmc_sample,
    ols_fit,
    rhat,
)


class GaussianTarget:
    """N(mean, cov) with analytic gradient, for sampler calibration tests."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        self.precision = np.linalg.inv(cov)
        self.cov = cov

    @property
    def dimension(self):
        return self.mean.shape[0]

    def log_density(self, x):
        d = x - self.mean
        return -0.5 * d @ self.precision @ d

    def gradient(self, x):
        return -self.precision @ (x - self.mean)


def test_standard_normal_moments_10d():
    target = GaussianTarget(np.zeros(10), np.eye(10))
    config = SamplerConfig(chains=4, iterations=1000, seed=42)
    chains = hmc_sample(target, config)
    flat = chains.flat()
    assert flat.shape == (4 * 500, 10)
    # Monte Carlo standard error from the empirical autocorrelation-free bound:
    # chains mix well here, so n_eff ~ n is a fair approximation for the 3-SE check.
    se = flat.std(axis=0) / np.sqrt(flat.shape[0] / 10.0)  # conservative n_eff
    assert np.all(np.abs(flat.mean(axis=0)) < 3 * se)
    assert np.all(flat.var(axis=0) > 0.8)
    assert np.all(flat.var(axis=0) < 1.2)
    assert not chains.diagnostic_failure
    assert np.all(rhat(chains) < 1.05)


def test_zero_post_warmup_is_config_error():
    with pytest.raises(ConfigurationError):
        SamplerConfig(iterations=1)
    with pytest.raises(ConfigurationError):
        SamplerConfig(warmup_fraction=1.0)


def test_correlated_gaussian_recovers_correlation():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    target = GaussianTarget(np.zeros(2), cov)
    chains = hmc_sample(target, SamplerConfig(chains=4, iterations=1500, seed=11))
    flat = chains.flat()
    corr = np.corrcoef(flat.T)[0, 1]
    assert abs(corr - 0.9) < 0.05


def test_reproducibility_bit_identical():
    target = GaussianTarget(np.zeros(3), np.eye(3))
    config = SamplerConfig(chains=2, iterations=200, seed=7)
    a = hmc_sample(target, config)
    b = hmc_sample(target, config)
    assert np.array_equal(a.draws, b.draws)
    assert np.array_equal(a.step_sizes, b.step_sizes)


def test_one_d_normal_moments():
    target = GaussianTarget(np.array([2.0]), np.array([[4.0]]))
    chains = hmc_sample(target, SamplerConfig(chains=4, iterations=1500, seed=3))
    flat = chains.flat()[:, 0]
    se = flat.std() / np.sqrt(flat.size / 10.0)
    assert abs(flat.mean() - 2.0) < 3 * se
    assert 0.8 * 4.0 < flat.var() < 1.2 * 4.0


def test_rhat_identical_constant_chains_flagged():
    draws = np.ones((3, 50, 2))
    with pytest.warns(DegenerateVarianceWarning):
        values = rhat(draws)
    assert values.shape == (2,)
    assert np.all(values == 1.0)


def test_rhat_detects_split_chains():
    rng = np.random.default_rng(0)
    good = rng.normal(size=(2, 500, 1))
    bad = np.stack([rng.normal(0, 1, size=(500, 1)), rng.normal(10, 1, size=(500, 1))])
    assert rhat(good)[0] < 1.05
    assert rhat(bad)[0] > 1.1


def test_rhat_requires_two_chains():
    with pytest.raises(InsufficientChainsError):
        rhat(np.zeros((1, 100, 2)))


def test_gaussian_target_gradient_matches_fd():
    rng = np.random.default_rng(1)
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    target = GaussianTarget(np.array([1.0, -1.0]), cov)
    check_gradient(target, rng.normal(size=(20, 2)))


def test_ols_exact_line():
    x = np.linspace(0, 1, 20)
    design = np.column_stack([np.ones(20), x])
    y = 2.0 + 3.0 * x
    fit = ols_fit(design, y)
    assert np.allclose(fit.coefficients, [2.0, 3.0], atol=1e-10)
    assert np.allclose(fit.residuals, 0.0, atol=1e-10)


def test_ols_matches_normal_equations_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        design = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        fit = ols_fit(design, y)
        oracle = np.linalg.inv(design.T @ design) @ design.T @ y
        assert np.allclose(fit.coefficients, oracle, atol=1e-9)
        # Residuals orthogonal to the column space.
        assert np.max(np.abs(design.T @ fit.residuals)) < 1e-8 * np.linalg.norm(y)


def test_ols_singular_design_names_columns():
    x = np.linspace(0, 1, 10)
    design = np.column_stack([np.ones(10), x, 2 * x])
    with pytest.raises(SingularDesignError) as err:
        ols_fit(design, x)
    assert "2" in str(err.value)


def test_chainset_exposes_postwarmup_only():
    target = GaussianTarget(np.zeros(2), np.eye(2))
    config = SamplerConfig(chains=2, iterations=100, warmup_fraction=0.5, seed=0)
    chains = hmc_sample(target, config)
    assert chains.draws.shape == (2, 50, 2)
    assert chains.warmup == 50
