"""Scaled principal-component basis for ensemble output matrices.

The ensemble matrix has one vectorized run per row (p runs x n locations).
After centering each column, the basis columns are the leading right singular
vectors scaled by the square root of their covariance eigenvalues, so that
``K.T @ K == diag(eigenvalues)`` and the per-run scores have unit sample
variance.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

__all__ = ["center_columns", "PrincipalComponentBasis"]


def center_columns(m_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract column means from a p x n matrix.

    Returns the centered matrix and the means; requires p >= 2.
    """
    m_raw = np.atleast_2d(np.asarray(m_raw, dtype=float))
    if m_raw.shape[0] < 2:
        raise ValueError("need at least two rows to center columns")
    means = m_raw.mean(axis=0)
    return m_raw - means, means


class PrincipalComponentBasis(BaseEstimator, TransformerMixin):
    """SVD basis of a centered ensemble matrix, truncated by count or by
    explained-variance fraction.

    Parameters
    ----------
    n_components : int, optional
        Number of components to keep. Mutually exclusive with
        ``variance_fraction``.
    variance_fraction : float in (0, 1], optional
        Keep the smallest number of components whose cumulative eigenvalue
        share reaches this fraction. Default 0.9 when neither argument is
        given.

    Attributes
    ----------
    components_ : array, shape (n, J)
        Scaled basis columns ``sqrt(lambda_j) * e_j``.
    eigenvalues_ : array, shape (J,)
        Descending eigenvalues of the column covariance (divisor p - 1).
    column_means_ : array, shape (n,)
    scores_ : array, shape (p, J)
        Per-run scores of the fitted ensemble (unit sample variance).
    explained_fraction_ : float
    """

    def __init__(self, n_components=None, variance_fraction=None):
        self.n_components = n_components
        self.variance_fraction = variance_fraction

    def _resolve_truncation(self, eigenvalues):
        if self.n_components is not None and self.variance_fraction is not None:
            raise ValueError("give n_components or variance_fraction, not both")
        total = eigenvalues.sum()
        if self.n_components is not None:
            j = int(self.n_components)
            if not 1 <= j <= eigenvalues.size:
                raise ValueError(
                    f"n_components={j} outside 1..rank={eigenvalues.size}")
            return j
        fraction = 0.9 if self.variance_fraction is None else float(self.variance_fraction)
        if not 0 < fraction <= 1:
            raise ValueError("variance_fraction must be in (0, 1]")
        cum = np.cumsum(eigenvalues) / total
        return int(np.searchsorted(cum, fraction - 1e-12) + 1)

    def fit(self, M, y=None):
        """Center columns of the p x n matrix M and build the basis."""
        m_centered, means = center_columns(M)
        p, n = m_centered.shape
        _, svals, vt = np.linalg.svd(m_centered, full_matrices=False)
        tol = max(p, n) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
        rank = int(np.sum(svals > tol))
        if rank == 0:
            raise ValueError("ensemble matrix has rank 0 after centering")
        eigenvalues = svals[:rank] ** 2 / (p - 1)
        j = self._resolve_truncation(eigenvalues)
        self.column_means_ = means
        self.eigenvalues_ = eigenvalues[:j]
        self.components_ = vt[:j].T * np.sqrt(self.eigenvalues_)
        self.explained_fraction_ = float(eigenvalues[:j].sum() / eigenvalues.sum())
        self.rank_ = rank
        self.n_components_ = j
        self.scores_ = m_centered @ (self.components_ / self.eigenvalues_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "components_"):
            raise NotFittedError("basis is not fitted; call fit first")

    def project(self, y_centered: np.ndarray) -> np.ndarray:
        """Scores of an already-centered length-n vector.

        Orthogonality of the scaled columns reduces the least-squares
        projection ``(K.T K)^{-1} K.T y`` to ``diag(1/lambda) K.T y``.
        """
        self._check_fitted()
        y_centered = np.asarray(y_centered, dtype=float)
        if y_centered.shape[-1] != self.components_.shape[0]:
            raise ValueError(
                f"vector length {y_centered.shape[-1]} != basis rows {self.components_.shape[0]}")
        return (y_centered @ self.components_) / self.eigenvalues_

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        """Field-space vector ``K @ scores + column_means``."""
        self._check_fitted()
        scores = np.asarray(scores, dtype=float)
        if scores.shape[-1] != self.n_components_:
            raise ValueError(
                f"scores length {scores.shape[-1]} != {self.n_components_} components")
        return scores @ self.components_.T + self.column_means_

    def transform(self, Y) -> np.ndarray:
        """Scores of raw (uncentered) vectors or row-stacked matrices."""
        self._check_fitted()
        return self.project(np.asarray(Y, dtype=float) - self.column_means_)

    def inverse_transform(self, scores) -> np.ndarray:
        return self.reconstruct(scores)
