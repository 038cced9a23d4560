"""Pairwise distances, the similarity metric configuration, and nearest-match
identification.

All scalar results are accumulated in float64 with a fixed per-component
summation order, and the matrix routines apply exactly the same kernel row by
row, so every matrix entry is bitwise identical to the corresponding scalar
call and results do not depend on the worker-thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._parallel import map_ordered
from ._validation import (
    check_finite,
    check_same_dimension,
    check_square_matrix,
    check_vector,
)
from .exceptions import DimensionMismatchError
from .store import EmbeddingSet

SYMMETRY_TOL = 1e-9
EIGENVALUE_TOL = 1e-9

METRIC_KINDS = ("euclidean", "mahalanobis")


@dataclass(frozen=True)
class MetricConfig:
    """Distance metric selection.

    Parameters
    ----------
    kind : {"euclidean", "mahalanobis"}
    matrix : ndarray of shape (dim, dim), optional
        Required for the Mahalanobis quadratic form; must be symmetric
        positive semidefinite within tolerance (1e-9 on symmetry, smallest
        eigenvalue >= -1e-9).
    """

    kind: str = "euclidean"
    matrix: np.ndarray | None = None

    def validate(self, dimension: int | None = None) -> None:
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "euclidean":
            return
        if self.matrix is None:
            raise ValueError("mahalanobis metric requires a matrix")
        m = check_square_matrix(self.matrix, "metric matrix")
        if dimension is not None and m.shape[0] != dimension:
            raise DimensionMismatchError(
                f"metric matrix side {m.shape[0]} != embedding dimension {dimension}"
            )
        ok, min_eig = psd_check(m)
        if not ok:
            raise ValueError(
                f"metric matrix is not positive semidefinite within tolerance "
                f"(smallest eigenvalue estimate {min_eig:.3e})"
            )


def psd_check(matrix) -> tuple[bool, float]:
    """Test symmetry and positive semidefiniteness within tolerance.

    Returns
    -------
    ok : bool
        True iff the matrix is symmetric within 1e-9 and its smallest
        eigenvalue is >= -1e-9.
    min_eigenvalue : float
        Smallest eigenvalue of the symmetrized matrix.
    """
    m = check_square_matrix(matrix)
    if m.shape[0] == 0:
        raise ValueError("matrix must have side >= 1")
    check_finite(m, "matrix")
    symmetric = float(np.abs(m - m.T).max()) <= SYMMETRY_TOL
    min_eig = float(np.linalg.eigvalsh((m + m.T) / 2.0).min())
    return symmetric and min_eig >= -EIGENVALUE_TOL, min_eig


def euclidean_distance(f1, f2) -> float:
    """Euclidean norm of ``f1 - f2``, accumulated in float64."""
    a = check_vector(f1, "f1")
    b = check_vector(f2, "f2")
    check_same_dimension(a, b)
    d = a - b
    return float(np.sqrt((d * d).sum()))


def mahalanobis_quadratic(f1, f2, config: MetricConfig) -> float:
    """Quadratic form d^T M d for d = f1 - f2 under a validated PSD matrix."""
    if config.kind != "mahalanobis":
        raise ValueError("config.kind must be 'mahalanobis'")
    a = check_vector(f1, "f1")
    b = check_vector(f2, "f2")
    check_same_dimension(a, b)
    config.validate(a.shape[0])
    m = np.asarray(config.matrix, dtype=np.float64)
    d = a - b
    # einsum with optimize=False keeps a fixed summation order, bitwise
    # matching the row kernel used by pairwise_matrix.
    value = float(np.einsum("j,jk,k->", d, m, d, optimize=False))
    return max(value, 0.0)


def _euclidean_rows(x: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    d = gallery - x
    return np.sqrt((d * d).sum(axis=1))


def _mahalanobis_rows(x: np.ndarray, gallery: np.ndarray, m: np.ndarray) -> np.ndarray:
    d = gallery - x
    values = np.einsum("ij,jk,ik->i", d, m, d, optimize=False)
    return np.maximum(values, 0.0)


def as_vector_matrix(data, name: str = "embeddings") -> np.ndarray:
    """Coerce an EmbeddingSet or array-like to an (n, dim) float64 matrix."""
    if isinstance(data, EmbeddingSet):
        return data.vectors(np.float64)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


def pairwise_matrix(probes, gallery, config: MetricConfig | None = None) -> np.ndarray:
    """Dense probe-by-gallery distance matrix.

    Parameters
    ----------
    probes, gallery : EmbeddingSet or array-like of shape (n, dim)
    config : MetricConfig, optional
        Defaults to Euclidean.

    Returns
    -------
    ndarray of shape (n_probes, n_gallery), float64
        Entry (i, j) equals the scalar metric applied to probe i and gallery
        j, bit for bit.
    """
    config = config or MetricConfig()
    X = as_vector_matrix(probes, "probes")
    Y = as_vector_matrix(gallery, "gallery")
    check_same_dimension(X, Y, "probe and gallery sets")
    config.validate(X.shape[1])

    if config.kind == "euclidean":
        kernel = lambda x: _euclidean_rows(x, Y)  # noqa: E731
    else:
        m = np.asarray(config.matrix, dtype=np.float64)
        kernel = lambda x: _mahalanobis_rows(x, Y, m)  # noqa: E731

    rows = map_ordered(kernel, list(X))
    if not rows:
        return np.empty((0, Y.shape[0]), dtype=np.float64)
    return np.stack(rows)


def validate_distance_matrix(matrix, *, joint: bool = False, tol: float = 1e-12) -> np.ndarray:
    """Check distance-matrix invariants; returns the validated float64 array.

    With ``joint=True`` the matrix must additionally be square, symmetric
    within ``tol`` and zero on the diagonal (same set on both axes).
    """
    d = np.asarray(matrix, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"distance matrix must be 2-D, got shape {d.shape}")
    check_finite(d, "distance matrix")
    if d.size and d.min() < 0:
        raise ValueError("distance matrix has negative entries")
    if joint:
        if d.shape[0] != d.shape[1]:
            raise ValueError(f"joint matrix must be square, got shape {d.shape}")
        if d.size:
            if float(np.abs(d - d.T).max()) > tol:
                raise ValueError("joint matrix is not symmetric within tolerance")
            if float(np.abs(np.diagonal(d)).max()) > 0.0:
                raise ValueError("joint matrix diagonal is not zero")
    return d


def identify(probe_row) -> int:
    """Index of the best gallery match for one probe's distance row.

    Smaller distance wins; exact ties resolve to the lowest gallery index.
    """
    row = np.asarray(probe_row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValueError("probe row must be a non-empty 1-D array")
    return int(np.argmin(row))


class NearestGalleryClassifier(BaseEstimator):
    """Predict each probe's identity as its nearest gallery point's label.

    Fit on gallery vectors, optionally with labels; ``predict`` returns the
    fitted labels of the closest gallery points, or the gallery indices
    themselves when no labels were given.
    """

    def __init__(self, metric: str = "euclidean", metric_matrix=None):
        self.metric = metric
        self.metric_matrix = metric_matrix

    def _metric_config(self) -> MetricConfig:
        matrix = None
        if self.metric_matrix is not None:
            matrix = np.asarray(self.metric_matrix, dtype=np.float64)
        return MetricConfig(kind=self.metric, matrix=matrix)

    def fit(self, X, y=None):
        gallery = as_vector_matrix(X, "gallery")
        if gallery.shape[0] == 0:
            raise ValueError("gallery must contain at least one point")
        self._metric_config().validate(gallery.shape[1])
        if y is not None:
            y = np.asarray(y)
            if y.shape[0] != gallery.shape[0]:
                raise ValueError("labels must align with gallery rows")
        self.gallery_ = gallery
        self.labels_ = y
        self.n_features_in_ = gallery.shape[1]
        return self

    def decision_distances(self, X) -> np.ndarray:
        check_is_fitted(self, "gallery_")
        return pairwise_matrix(X, self.gallery_, self._metric_config())

    def predict(self, X) -> np.ndarray:
        distances = self.decision_distances(X)
        indices = np.array([identify(row) for row in distances], dtype=np.int64)
        if self.labels_ is None:
            return indices
        return np.asarray(self.labels_)[indices]
