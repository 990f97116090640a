import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import centered
from mipca.data import IncompleteMatrix
from mipca.errors import DegenerateDofError, EmptyColumnError, RankTooLargeError
from mipca.pca import (
    estimate_sigma2,
    fit_pca,
    ml_reconstruct,
    noise_floor,
    observed_column_means,
    residual_dof,
    rpca_reconstruct,
    shrinkage_factors,
    truncated_svd,
)


def eig_oracle(x):
    """Eigenpairs of X'X in descending order (independent of the SVD path)."""
    w, v = np.linalg.eigh(x.T @ x)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


@pytest.fixture
def x64():
    return centered(np.random.default_rng(7).standard_normal((6, 4)))


def test_column_means_skip_missing():
    x = IncompleteMatrix.from_array([[1.0, 4.0], [np.nan, 5.0], [3.0, 6.0]])
    np.testing.assert_array_equal(observed_column_means(x), [2.0, 5.0])


def test_column_means_complete_matrix_is_ordinary_mean(rng):
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(observed_column_means(x), x.mean(axis=0), rtol=0, atol=1e-15)


def test_column_means_empty_column():
    with pytest.raises(EmptyColumnError):
        observed_column_means(np.array([[np.nan, 1.0], [np.nan, 2.0]]))


def test_svd_diagonal():
    f = truncated_svd(np.diag([3.0, 1.0]), 2, centered=False)
    np.testing.assert_allclose(f.d, [3.0, 1.0])
    np.testing.assert_allclose(np.abs(f.U), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(np.abs(f.V), np.eye(2), atol=1e-15)


def test_svd_diagonal_rank_cap_when_centered():
    # Two centered rows span at most one dimension.
    with pytest.raises(RankTooLargeError):
        truncated_svd(np.diag([3.0, 1.0]), 2)


def test_svd_rank_one_exact(rng):
    x = np.outer(rng.standard_normal(8), rng.standard_normal(5))
    f = truncated_svd(x, 1)
    assert np.max(np.abs(ml_reconstruct(f) - x)) < 1e-12


def test_svd_matches_eigen_oracle(x64):
    f = truncated_svd(x64, 2)
    w, _ = eig_oracle(x64)
    np.testing.assert_allclose(f.d**2, w[:2], rtol=0, atol=1e-10)


def test_svd_rank_too_large(x64):
    with pytest.raises(RankTooLargeError):
        truncated_svd(x64, 5)


def test_sign_convention(rng):
    f = truncated_svd(centered(rng.standard_normal((10, 5))), 3)
    idx = np.argmax(np.abs(f.V), axis=0)
    assert np.all(f.V[idx, np.arange(3)] > 0)


def test_full_rank_reconstruction_is_identity(x64):
    f = truncated_svd(x64, 4)
    assert np.max(np.abs(ml_reconstruct(f) - x64)) < 1e-10


def test_rank_zero_reconstruction_is_zero(x64):
    np.testing.assert_array_equal(ml_reconstruct(truncated_svd(x64, 0)), np.zeros_like(x64))


def test_reconstruction_matches_projection_oracle(x64):
    _, v = eig_oracle(x64)
    projection = x64 @ v[:, :2] @ v[:, :2].T
    assert np.max(np.abs(ml_reconstruct(truncated_svd(x64, 2)) - projection)) < 1e-10


def test_sigma2_zero_residual(x64):
    assert estimate_sigma2(x64, x64, 1) == 0.0


@pytest.mark.parametrize("n,p,s,dof", [(30, 6, 2, 108), (200, 6, 2, 788), (3, 3, 2, 0)])
def test_residual_dof(n, p, s, dof):
    assert residual_dof(n, p, s) == dof


def test_sigma2_degenerate_dof():
    x = np.zeros((3, 3))
    with pytest.raises(DegenerateDofError):
        estimate_sigma2(x, x, 2)


def test_sigma2_value(rng):
    x = rng.standard_normal((30, 6))
    xhat = rng.standard_normal((30, 6))
    assert estimate_sigma2(x, xhat, 2) == pytest.approx(np.sum((x - xhat) ** 2) / 108, rel=1e-14)


def test_shrinkage_no_noise():
    np.testing.assert_array_equal(shrinkage_factors([5.0, 2.0], 0.0, 30, 6), [1.0, 1.0])


def test_shrinkage_at_noise_floor():
    floor = 30 * 6 / 6 * 0.4
    assert noise_floor(0.4, 30, 6) == pytest.approx(floor)
    phi = shrinkage_factors([floor], 0.4, 30, 6)
    assert phi[0] == pytest.approx(0.0, abs=1e-15)


def test_shrinkage_clamped():
    phi = shrinkage_factors([1.0, 0.0], 0.4, 30, 6)
    np.testing.assert_array_equal(phi, [0.0, 0.0])


def test_shrinkage_value():
    # (lambda - np/min(n-1, p) sigma2) / lambda with n=30, p=6: floor = 30 sigma2
    np.testing.assert_allclose(shrinkage_factors([60.0], 1.0, 30, 6), [0.5])


def test_rpca_identity_and_total_shrinkage(x64):
    f = truncated_svd(x64, 2)
    np.testing.assert_array_equal(rpca_reconstruct(f, np.ones(2)), ml_reconstruct(f))
    np.testing.assert_array_equal(rpca_reconstruct(f, np.zeros(2)), np.zeros_like(x64))


def test_rpca_matches_term_by_term_oracle(x64):
    fit = fit_pca(x64, 2)
    _, v = eig_oracle(x64)
    # Rank-one term s of the SVD equals X v_s v_s' (sign cancels).
    expected = sum(fit.phi[s] * np.outer(x64 @ v[:, s], v[:, s]) for s in range(2))
    assert np.max(np.abs(fit.xhat_rpca - expected)) < 1e-10


def test_rpca_equals_pca_without_noise(rng):
    x = centered(rng.standard_normal((12, 2)) @ rng.standard_normal((2, 5)))
    fit = fit_pca(x, 2)
    assert fit.sigma2 < 1e-25
    assert np.max(np.abs(fit.xhat_rpca - fit.xhat)) < 1e-10


def test_unregularized_fit_tolerates_zero_dof():
    x = centered(np.random.default_rng(1).standard_normal((3, 3)))
    fit = fit_pca(x, 2, regularize=False)
    assert np.isnan(fit.sigma2)
    np.testing.assert_array_equal(fit.phi, [1.0, 1.0])
    with pytest.raises(DegenerateDofError):
        fit_pca(x, 2, regularize=True)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 12), p=st.integers(2, 6), seed=st.integers(0, 2**31))
def test_orthonormal_factors(n, p, seed):
    x = centered(np.random.default_rng(seed).standard_normal((n, p)))
    s = min(n - 1, p)
    f = truncated_svd(x, s)
    assert np.max(np.abs(f.U.T @ f.U - np.eye(s))) < 1e-10
    assert np.max(np.abs(f.V.T @ f.V - np.eye(s))) < 1e-10
    assert np.all(np.diff(f.d) <= 0) and np.all(f.d >= 0)


@pytest.mark.parametrize("s", [1, 2, 3])
def test_optimality_against_random_rank_s(s):
    rng = np.random.default_rng(100 + s)
    x = centered(rng.standard_normal((8, 5)))
    f = truncated_svd(x, s)
    best = np.sum((x - ml_reconstruct(f)) ** 2)
    for k in range(200):
        if k % 2:
            r = rng.standard_normal((8, s)) @ rng.standard_normal((s, 5))
        else:
            eps = 10.0 ** rng.uniform(-4, 0)
            a = f.U * f.d + eps * rng.standard_normal((8, s))
            b = f.V + eps * rng.standard_normal((5, s))
            r = a @ b.T
        assert best <= np.sum((x - r) ** 2) + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), s=st.integers(1, 3))
def test_rpca_shrinks_each_component(seed, s):
    x = centered(np.random.default_rng(seed).standard_normal((20, 5)))
    fit = fit_pca(x, s)
    assert np.all((fit.phi >= 0) & (fit.phi <= 1))
    assert np.linalg.norm(fit.xhat_rpca) <= np.linalg.norm(fit.xhat) + 1e-12


def test_fit_is_deterministic(x64):
    a, b = fit_pca(x64, 2), fit_pca(x64.copy(), 2)
    assert np.array_equal(a.factors.U, b.factors.U)
    assert np.array_equal(a.factors.V, b.factors.V)
    assert np.array_equal(a.xhat_rpca, b.xhat_rpca)
