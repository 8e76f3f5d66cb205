"""
Dense linear algebra used by every unlearning step.

Everything is computed in float64. The nullspace projector removes the span
of a stacked forget matrix M (rows in R^E):

    Mᵀ = U Σ Vᵀ,   P = I_E − U_r U_rᵀ

where r is the numerical rank of M under a relative singular-value cutoff.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.utils.error_handlers import DimensionError, \
    ForgetSubspaceFull, \
    InvalidMatrix, \
    ZeroVector

logger = logging.getLogger(__name__)

DEFAULT_RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vt


@dataclass(frozen=True)
class NullspaceProjector:
    p: np.ndarray
    rank_removed: int

    @property
    def dim(self) -> int:
        return int(self.p.shape[0])


def as_matrix(data, name: str = 'matrix') -> np.ndarray:
    """Coerce to a non-empty, finite, 2-D float64 array."""
    matrix = np.asarray(data,
                        dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1,
                                -1)
    if matrix.ndim != 2 or matrix.size == 0:
        raise InvalidMatrix(f"{name} must be a non-empty 2-D array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return matrix


def as_vector(data, name: str = 'vector') -> np.ndarray:
    vector = np.asarray(data,
                        dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return vector


def thin_svd(a) -> SvdFactors:
    """Thin SVD with singular values sorted non-increasing; r = min(rows, cols)."""
    matrix = as_matrix(a)
    u, s, vt = np.linalg.svd(matrix,
                             full_matrices=False)
    return SvdFactors(u,
                      s,
                      vt)


def numerical_rank(singular_values, rel_tol: float = DEFAULT_RANK_REL_TOL) -> int:
    """Count singular values above rel_tol times the largest one."""
    s = np.asarray(singular_values,
                   dtype=np.float64)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def orthonormal_basis(rows, rel_tol: float = DEFAULT_RANK_REL_TOL) -> np.ndarray:
    """Orthonormal basis (E×r) of the span of the given rows."""
    factors = thin_svd(as_matrix(rows,
                                 'forget matrix').T)
    rank = numerical_rank(factors.singular_values,
                          rel_tol)
    return factors.u[:, :rank]


def nullspace_projector(rows, rel_tol: float = DEFAULT_RANK_REL_TOL) -> NullspaceProjector:
    """
    Build P = I − U Uᵀ removing the span of the rows of M.

    Args:
        rows: forget matrix M, one row per embedding (m×E)
        rel_tol: relative singular-value cutoff for the numerical rank

    Returns:
        NullspaceProjector: symmetric idempotent P and the rank removed

    Raises:
        ForgetSubspaceFull: if the rows could span (or do span) all of R^E
        InvalidMatrix: if M is empty, non-finite or numerically zero
    """
    m = as_matrix(rows,
                  'forget matrix')
    row_count, dim = m.shape
    if row_count >= dim:
        raise ForgetSubspaceFull(f"forget matrix has {row_count} rows but the embedding dimension is {dim}",
                                 payload={
                                     'rows': row_count,
                                     'embedding_dim': dim})

    basis = orthonormal_basis(m,
                              rel_tol)
    rank = basis.shape[1]
    if rank == 0:
        raise InvalidMatrix("forget matrix has numerical rank 0; it was most likely built incorrectly")
    if rank >= dim:
        raise ForgetSubspaceFull(f"forget matrix spans all {dim} embedding dimensions")

    p = np.eye(dim) - basis @ basis.T
    p = 0.5 * (p + p.T)
    logger.debug(f"Nullspace projector: {row_count} rows, rank removed {rank}, nullspace dim {dim - rank}")
    return NullspaceProjector(p,
                              rank)


def matmul(a, b) -> np.ndarray:
    left = np.asarray(a,
                      dtype=np.float64)
    right = np.asarray(b,
                       dtype=np.float64)
    if left.shape[-1] != right.shape[0]:
        raise DimensionError(f"cannot multiply {left.shape} by {right.shape}")
    return left @ right


def l2_normalize(v) -> np.ndarray:
    vector = as_vector(v)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ZeroVector("cannot normalize a zero vector")
    return vector / norm


def normalize_rows(matrix) -> np.ndarray:
    """Normalize each row; all-zero rows stay zero."""
    m = np.asarray(matrix,
                   dtype=np.float64)
    norms = np.linalg.norm(m,
                           axis=1,
                           keepdims=True)
    safe = np.where(norms > 0.0,
                    norms,
                    1.0)
    return m / safe


def cosine(a, b) -> float:
    """Cosine similarity in [−1, 1]; zero vectors have cosine 0 with anything."""
    left = as_vector(a,
                     'a')
    right = as_vector(b,
                      'b')
    if left.shape != right.shape:
        raise DimensionError(f"cosine of vectors with lengths {left.size} and {right.size}")
    denominator = np.linalg.norm(left) * np.linalg.norm(right)
    if denominator == 0.0:
        return 0.0
    return float(np.clip(left @ right / denominator,
                         -1.0,
                         1.0))
