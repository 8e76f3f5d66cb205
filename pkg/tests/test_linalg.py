import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import null_space

from app.core.linalg import cosine, \
    l2_normalize, \
    matmul, \
    normalize_rows, \
    nullspace_projector, \
    numerical_rank, \
    orthonormal_basis, \
    thin_svd
from app.utils.error_handlers import DimensionError, \
    ForgetSubspaceFull, \
    InvalidMatrix, \
    ZeroVector


def gram_schmidt_basis(rows, tol=1e-9):
    """Modified Gram–Schmidt with re-orthogonalisation; drops dependent rows."""
    basis = []
    for row in np.asarray(rows, dtype=np.float64):
        v = row.copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        if np.linalg.norm(v) > tol * max(np.linalg.norm(row), 1.0):
            basis.append(v / np.linalg.norm(v))
    return np.array(basis)


def jacobi_singular_values(a, sweeps=60):
    """One-sided Jacobi SVD; returns singular values sorted non-increasing."""
    u = np.array(a, dtype=np.float64, copy=True)
    n = u.shape[1]
    for _ in range(sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = u[:, i] @ u[:, i]
                beta = u[:, j] @ u[:, j]
                gamma = u[:, i] @ u[:, j]
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta ** 2)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t ** 2)
                s = c * t
                ui = u[:, i].copy()
                u[:, i] = c * ui - s * u[:, j]
                u[:, j] = s * ui + c * u[:, j]
        if not rotated:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


def random_forget_matrix(rng, dim):
    rows = int(rng.integers(1, dim // 2 + 1))
    m = rng.standard_normal((rows, dim))
    if rows > 2 and rng.random() < 0.3:
        # plant a dependent row
        m[-1] = m[0] - 2.0 * m[1]
    return m


def test_projector_algebra_on_random_matrices():
    rng = np.random.default_rng(0)
    for trial in range(200):
        dim = (16, 32, 64)[trial % 3]
        m = random_forget_matrix(rng, dim)
        projector = nullspace_projector(m)
        p = projector.p

        assert_allclose(p, p.T, atol=1e-10)
        assert_allclose(p @ p, p, atol=1e-10)
        assert np.max(np.abs(m @ p)) <= 1e-8 * max(1.0, np.max(np.abs(m)))

        q = gram_schmidt_basis(m)
        assert projector.rank_removed == q.shape[0]
        oracle = np.eye(dim) - q.T @ q
        assert_allclose(p, oracle, atol=1e-8)

        # vectors orthogonal to the rows are fixed
        v = rng.standard_normal(dim)
        v -= q.T @ (q @ v)
        assert_allclose(v @ p, v, atol=1e-10)


def test_projector_matches_scipy_null_space(rng):
    m = rng.standard_normal((5, 24))
    nullspace = null_space(m)
    p = nullspace_projector(m).p
    assert_allclose(p, nullspace @ nullspace.T, atol=1e-10)


def test_singular_values_match_jacobi_oracle(rng):
    a = rng.standard_normal((12, 7))
    factors = thin_svd(a)
    assert_allclose(factors.singular_values, jacobi_singular_values(a), rtol=1e-10, atol=1e-12)
    assert_allclose(factors.reconstruct(), a, atol=1e-12)
    assert np.all(np.diff(factors.singular_values) <= 0)


def test_single_row_projector(rng):
    t = l2_normalize(rng.standard_normal(8))
    p = nullspace_projector(t).p
    assert_allclose(p, np.eye(8) - np.outer(t, t), atol=1e-12)


def test_duplicate_rows_count_once(rng):
    row = rng.standard_normal(10)
    projector = nullspace_projector(np.vstack([row, row, 3.0 * row]))
    assert projector.rank_removed == 1


def test_full_forget_subspace_is_rejected(rng):
    with pytest.raises(ForgetSubspaceFull):
        nullspace_projector(rng.standard_normal((8, 8)))
    with pytest.raises(ForgetSubspaceFull):
        nullspace_projector(rng.standard_normal((9, 8)))


def test_zero_and_non_finite_matrices_are_rejected():
    with pytest.raises(InvalidMatrix):
        nullspace_projector(np.zeros((2, 6)))
    bad = np.ones((2, 6))
    bad[0, 0] = np.nan
    with pytest.raises(InvalidMatrix):
        nullspace_projector(bad)


def test_numerical_rank_uses_relative_cutoff():
    assert numerical_rank([10.0, 1.0, 1e-10]) == 2
    assert numerical_rank([10.0, 1.0, 2e-9]) == 3
    assert numerical_rank([0.0, 0.0]) == 0


def test_orthonormal_basis_spans_rows(rng):
    m = rng.standard_normal((3, 12))
    basis = orthonormal_basis(m)
    assert basis.shape == (12, 3)
    assert_allclose(basis.T @ basis, np.eye(3), atol=1e-12)
    assert_allclose(basis @ (basis.T @ m.T), m.T, atol=1e-12)


def test_vector_helpers():
    with pytest.raises(ZeroVector):
        l2_normalize(np.zeros(3))
    assert cosine([1.0, 0.0], [0.0, 0.0]) == 0.0
    assert cosine([1.0, 1.0], [2.0, 2.0]) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    rows = normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert_allclose(rows, [[0.6, 0.8], [0.0, 0.0]])


def test_projector_ignores_row_order_and_row_scale(rng):
    m = rng.standard_normal((5, 16))
    p = nullspace_projector(m).p
    assert_allclose(nullspace_projector(m[rng.permutation(5)]).p, p, atol=1e-10)
    scales = np.array([2.0, -0.5, 7.0, 1e-3, -3.0])
    assert_allclose(nullspace_projector(m * scales[:, None]).p, p, atol=1e-10)


def test_reapplying_the_projector_changes_nothing(rng):
    w = rng.standard_normal((24, 12))
    p = nullspace_projector(rng.standard_normal((4, 12))).p
    once = w @ p
    assert_allclose(once @ p, once, atol=1e-10)


def test_thin_svd_small_examples():
    identity = thin_svd(np.eye(2))
    assert_allclose(identity.singular_values, [1.0, 1.0], atol=1e-12)
    assert_allclose(identity.reconstruct(), np.eye(2), atol=1e-12)

    factors = thin_svd([[3.0, 0.0], [0.0, 0.0]])
    assert_allclose(factors.singular_values, [3.0, 0.0], atol=1e-12)
    assert_allclose(np.abs(factors.u[:, 0]), [1.0, 0.0], atol=1e-12)
    assert_allclose(np.abs(factors.vt[0]), [1.0, 0.0], atol=1e-12)
