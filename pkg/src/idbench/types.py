"""Core value types: datasets, neighbor graphs, spectra and estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ParameterError

#: eigenvalues below CLAMP_REL * lambda_1 are clamped to exactly zero
CLAMP_REL = 1e-10


def _as_readonly_matrix(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ParameterError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """A point cloud: ``values`` has one row per point, one column per feature.

    Rows keep their order; the row index is the identity of a point.  Entries
    must be finite.  ``labels`` optionally tags each row with an integer
    (e.g. the manifold component a generator drew it from).
    """

    values: np.ndarray
    name: str = "dataset"
    labels: np.ndarray | None = None

    def __post_init__(self):
        arr = _as_readonly_matrix(self.values)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError("dataset must have at least one row and one column")
        if not np.isfinite(arr).all():
            raise ParameterError("dataset values must be finite (no NaN/Inf)")
        object.__setattr__(self, "values", arr)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64, copy=True)
            if lab.shape != (arr.shape[0],):
                raise ParameterError("labels must be one integer per row")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n_obj(self) -> int:
        return self.values.shape[0]

    @property
    def n_var(self) -> int:
        return self.values.shape[1]

    def replace_values(self, values: np.ndarray, suffix: str = "") -> "Dataset":
        """New dataset with the same metadata and different values."""
        name = self.name + suffix if suffix else self.name
        labels = self.labels
        if labels is not None and len(labels) != len(values):
            labels = None
        return Dataset(values, name=name, labels=labels)


@dataclass(frozen=True)
class NeighborGraph:
    """Exact k-nearest-neighbor result.

    ``indices[i]`` lists the k neighbors of point i (self excluded), sorted by
    ascending distance with ties broken by ascending row index;
    ``distances[i]`` are the matching Euclidean distances.
    """

    k: int
    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        dst = np.asarray(self.distances, dtype=np.float64)
        if idx.shape != dst.shape or idx.ndim != 2 or idx.shape[1] != self.k:
            raise ParameterError("indices/distances must both be (n_obj, k)")
        idx.setflags(write=False)
        dst.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "distances", dst)


@dataclass(frozen=True)
class Spectrum:
    """Descending covariance eigenvalues; values < CLAMP_REL * lambda_1 are 0."""

    eigenvalues: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        eig = np.array(self.eigenvalues, dtype=np.float64, copy=True).ravel()
        if eig.size == 0:
            raise ParameterError("spectrum must be nonempty")
        eig = np.sort(eig)[::-1]
        top = eig[0] if eig[0] > 0 else 0.0
        eig[eig < CLAMP_REL * top] = 0.0
        eig.setflags(write=False)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "total", float(eig.sum()))

    def __len__(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def proportions(self) -> np.ndarray:
        if self.total <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total


@dataclass(frozen=True)
class IdEstimate:
    """One estimator's output.

    ``valid`` is true exactly when ``value`` is a finite, strictly positive
    number; invalid estimates carry value = NaN and a ``reason`` diagnostic.
    """

    value: float
    method: str
    params: dict
    valid: bool
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def of(cls, value: float, method: str, params: dict | None = None,
           **diagnostics: Any) -> "IdEstimate":
        value = float(value)
        valid = math.isfinite(value) and value > 0
        if not valid:
            diagnostics.setdefault("reason", "non-positive or non-finite value")
            value = math.nan
        return cls(value=value, method=method, params=dict(params or {}),
                   valid=valid, diagnostics=diagnostics)

    @classmethod
    def invalid(cls, method: str, params: dict | None = None, reason: str = "",
                **diagnostics: Any) -> "IdEstimate":
        if reason:
            diagnostics["reason"] = reason
        return cls(value=math.nan, method=method, params=dict(params or {}),
                   valid=False, diagnostics=diagnostics)


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares line through (log-abscissa, log-ordinate) pairs."""

    slope: float
    intercept: float
    r2: float
    points: tuple

    def as_diagnostics(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "points": [tuple(p) for p in self.points],
        }


def fit_loglog(log_x: np.ndarray, log_y: np.ndarray) -> ScalingFit:
    """Ordinary least squares of log_y on log_x with r-squared."""
    log_x = np.asarray(log_x, dtype=np.float64)
    log_y = np.asarray(log_y, dtype=np.float64)
    if log_x.size < 2:
        raise ParameterError("need at least 2 points to fit a line")
    design = np.column_stack([log_x, np.ones_like(log_x)])
    coef, *_ = np.linalg.lstsq(design, log_y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    fitted = design @ coef
    ss_res = float(np.sum((log_y - fitted) ** 2))
    ss_tot = float(np.sum((log_y - log_y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return ScalingFit(slope, intercept, r2, tuple(zip(log_x.tolist(), log_y.tolist())))


@dataclass(frozen=True)
class LocalIdField:
    """Per-point ID values produced by running a global estimator locally.

    ``values[i]`` is NaN when estimation failed at point i; ``n_invalid``
    counts those entries.
    """

    values: np.ndarray
    k: int
    method: str
    n_invalid: int = field(init=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True).ravel()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "n_invalid", int(np.count_nonzero(~np.isfinite(vals))))
