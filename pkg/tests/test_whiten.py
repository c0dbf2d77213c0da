import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdica.fastica import FastIcaConfig, MixingEstimate, fit
from hdica.inference import losses
from hdica.simulate import keyed_rng, sample_haar_orthogonal
from hdica.whiten import SingularCovarianceError, WhitenPlan, sqrt_pair, unwhiten_columns, whiten


def estimate(A):
    d = A.shape[1]
    return MixingEstimate(np.asarray(A, float), np.arange(d, dtype=float), np.zeros(d, int))


def test_plan_validation():
    with pytest.raises(ValueError):
        WhitenPlan("pca")
    with pytest.raises(ValueError):
        WhitenPlan(split_fraction=1.0)
    with pytest.raises(ValueError):
        WhitenPlan("known")


def test_known_covariance_examples():
    plan = WhitenPlan("known", sigma=np.diag([4.0, 1.0]))
    res = whiten(np.array([[2.0, 3.0], [0.0, 0.0]]), plan)
    np.testing.assert_allclose(res.whitened[0], [1.0, 3.0])
    out = unwhiten_columns(estimate(np.eye(2)), res)
    np.testing.assert_allclose(out.A_hat[:, 0], [2.0, 0.0])
    np.testing.assert_array_equal(out.kappa_hat, [0.0, 1.0])


def test_identity_covariance_unwhiten_is_identity(rng):
    res = whiten(rng.standard_normal((5, 3)), WhitenPlan("known", sigma=np.eye(3)))
    A = rng.standard_normal((3, 3))
    np.testing.assert_allclose(unwhiten_columns(estimate(A), res).A_hat, A, atol=1e-15)


def test_split_round_trip(rng):
    X = rng.standard_normal((101, 4)) @ rng.standard_normal((4, 4)) + 5.0
    res = whiten(X, WhitenPlan("split"))
    assert list(res.cov_rows) == list(range(51)) and list(res.fit_rows) == list(range(51, 101))
    np.testing.assert_allclose(res.whitened @ res.sigma_half + res.mean, X[51:], atol=1e-10)
    np.testing.assert_allclose(res.mean, X[:51].mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(res.sigma_half @ res.sigma_inv_half, np.eye(4), atol=1e-8)
    A = rng.standard_normal((4, 4))
    back = unwhiten_columns(estimate(A), res).A_hat
    np.testing.assert_allclose(res.sigma_inv_half @ back, A, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_sigma_half_squares_to_sample_covariance(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3 * d + 10, d)) @ rng.standard_normal((d, d))
    res = whiten(X, WhitenPlan("in_sample"))
    Xc = X - X.mean(axis=0)
    sigma = Xc.T @ Xc / X.shape[0]
    assert np.abs(res.sigma_half @ res.sigma_half - sigma).max() <= 1e-8 * np.abs(sigma).max()
    assert np.allclose(res.sigma_half, res.sigma_half.T)
    assert np.linalg.eigvalsh(res.sigma_half).min() > 0
    np.testing.assert_allclose(np.cov(res.whitened.T, bias=True), np.eye(d), atol=1e-8)


def test_none_mode_is_identity(rng):
    X = rng.standard_normal((7, 3))
    res = whiten(X, WhitenPlan("none"))
    np.testing.assert_array_equal(res.whitened, X)
    np.testing.assert_array_equal(res.sigma_half, np.eye(3))


def test_singular_covariance_names_eigenvalue(rng):
    Z = rng.standard_normal((50, 2))
    X = np.column_stack([Z, Z[:, 0] + Z[:, 1]])
    with pytest.raises(SingularCovarianceError, match="eigenvalue"):
        whiten(X, WhitenPlan("in_sample"))
    with pytest.raises(SingularCovarianceError):
        sqrt_pair(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        whiten(X[:3], WhitenPlan("split"))


def test_unwhiten_dimension_mismatch(rng):
    res = whiten(rng.standard_normal((5, 2)), WhitenPlan("none"))
    with pytest.raises(ValueError):
        unwhiten_columns(estimate(np.eye(3)), res)


def test_split_whitening_is_consistent():
    rng = np.random.default_rng(11)
    d, n = 10, 10_000
    A = sample_haar_orthogonal(d, rng)
    X = rng.laplace(0, 1 / np.sqrt(2), (n, d)) @ A.T
    res = whiten(X, WhitenPlan("split"))
    s = np.linalg.svd(res.sigma_inv_half @ A, compute_uv=False)
    assert np.abs(s - 1).max() <= 0.1


@pytest.mark.slow
def test_split_workflow_matches_orthonormal_workflow():
    # paired seeds: split-whiten -> fit -> unwhiten versus fitting the same
    # rows directly, with Sigma = I exactly
    diffs = []
    for r in range(100):
        rng = keyed_rng(5, r)
        A = sample_haar_orthogonal(10, rng)
        X = rng.laplace(0, 1 / np.sqrt(2), (4000, 10)) @ A.T
        res = whiten(X, WhitenPlan("split"))
        split = unwhiten_columns(fit(res.whitened, FastIcaConfig(seed=r)), res)
        direct = fit(X[res.fit_rows], FastIcaConfig(seed=r))
        diffs.append(losses(split.A_hat, A).ell_A - losses(direct.A_hat, A).ell_A)
    assert np.median(diffs) <= 0.02
