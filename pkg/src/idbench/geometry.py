"""Shared numeric substrate: exact k-NN, covariance spectra, PCA projection.

All operations are pure functions on immutable inputs.  The metric is
Euclidean throughout.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import ParameterError
from .types import Dataset, NeighborGraph, Spectrum

# Below this size (or above this width) exact search runs brute force; a
# space-partitioning tree is only a speedup and must return identical results.
_TREE_MIN_ROWS = 4096
_TREE_MAX_COLS = 30
_BRUTE_CHUNK = 512


def knn(data: Dataset, k: int) -> NeighborGraph:
    """Exact Euclidean k-nearest neighbors of every point.

    The query point itself is excluded by identity (not by distance), so
    duplicate points appear as zero-distance neighbors.  Ties are broken by
    ascending row index, which makes the result deterministic.
    """
    if k < 1:
        raise ParameterError("k must be a positive integer")
    n = data.n_obj
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than n_obj={n}")
    values = data.values
    if n > _TREE_MIN_ROWS and data.n_var <= _TREE_MAX_COLS:
        idx, dst = _knn_tree(values, k)
    else:
        idx, dst = _knn_brute(values, k)
    return NeighborGraph(k=k, indices=idx, distances=dst)


def _knn_brute(values: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _BRUTE_CHUNK):
        stop = min(start + _BRUTE_CHUNK, n)
        d = cdist(values[start:stop], values)
        rows = np.arange(start, stop)
        d[rows - start, rows] = np.inf  # exclude self by identity
        # stable sort: equal distances keep ascending-index order
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[start:stop] = order
        distances[start:stop] = np.take_along_axis(d, order, axis=1)
    return indices, distances


def _row_knn(values: np.ndarray, i: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    d = cdist(values[i : i + 1], values)[0]
    d[i] = np.inf
    order = np.argsort(d, kind="stable")[:k]
    return order, d[order]


def _knn_tree(values: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Tree-accelerated exact search.

    The tree supplies a candidate window of k + slack points per row;
    distances are recomputed with the same kernel as the brute path and the
    window re-sorted with the same tie rule.  Rows whose k-th neighbor ties
    with the first excluded candidate fall back to a full scan, since the
    tie class may extend beyond the window.
    """
    n = values.shape[0]
    q = min(n, k + 9)
    tree = cKDTree(values)
    _, cand = tree.query(values, k=q, workers=1)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        row_cand = cand[i]
        row_cand = row_cand[row_cand != i]
        if len(row_cand) < k + 1 and q < n:
            indices[i], distances[i] = _row_knn(values, i, k)
            continue
        d = cdist(values[i : i + 1], values[row_cand])[0]
        order = np.lexsort((row_cand, d))
        sorted_d = d[order]
        boundary_tie = len(order) > k and sorted_d[k] == sorted_d[k - 1]
        if boundary_tie and q < n:
            indices[i], distances[i] = _row_knn(values, i, k)
        else:
            keep = order[:k]
            indices[i] = row_cand[keep]
            distances[i] = d[keep]
    return indices, distances


def covariance_spectrum(data: Dataset) -> Spectrum:
    """Eigenvalues of the sample covariance (divisor n-1), descending.

    The spectrum has length min(n_obj - 1, n_var); eigenvalues below
    1e-10 * lambda_1 are clamped to zero.
    """
    n = data.n_obj
    if n < 2:
        raise ParameterError("covariance needs at least 2 points")
    centered = data.values - data.values.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    eig = sv**2 / (n - 1)
    length = min(n - 1, data.n_var)
    if eig.size > length:
        eig = eig[:length]
    elif eig.size < length:
        eig = np.pad(eig, (0, length - eig.size))
    return Spectrum(eigenvalues=eig)


def pca_project(data: Dataset, n_components: int) -> Dataset:
    """Project the data onto its top principal axes.

    Used by the pipeline to shrink feature counts for capped methods.  With
    n_components = rank the projection is an isometry on the data.
    """
    if n_components < 1:
        raise ParameterError("n_components must be positive")
    if n_components > data.n_var:
        raise ParameterError(
            f"n_components={n_components} exceeds n_var={data.n_var}"
        )
    centered = data.values - data.values.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    # deterministic sign: largest-magnitude loading of each axis positive
    for row in range(vt.shape[0]):
        pivot = np.argmax(np.abs(vt[row]))
        if vt[row, pivot] < 0:
            vt[row] = -vt[row]
    scores = centered @ vt[:n_components].T
    return data.replace_values(scores, suffix=f"|pca{n_components}")
