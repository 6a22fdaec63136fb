"""Nearest-neighbor and fractal-scaling dimension estimators.

CorrInt (correlation integral slope), MLE (k-NN likelihood with inverse
averaging), MOM (method of moments), MADA (manifold-adaptive ratio), TLE
(tight local estimation over reflected neighbor pairs), TwoNN (first-to-second
neighbor ratio), MiND_ML (minimum-neighbor-distance likelihood, integer and
continuous) and the k-NN-graph length-scaling estimator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

from .errors import DegenerateData, ParameterError
from .geometry import knn
from .seeding import substream
from .types import Dataset, IdEstimate, fit_loglog

_CORRINT_GRID = 16  # log-spaced radii between the two median-NN anchors
_TINY_TERM = 1e-10  # TLE terms below this ratio are numerical noise


@dataclass(frozen=True)
class NnParams:
    """Neighbor counts shared by the k-NN estimators.

    k is the single neighborhood size (MOM, MADA, TLE, MiND); k1..k2 is the
    averaging range used by MLE and the radius anchors of CorrInt.
    """

    k: int = 20
    k1: int = 10
    k2: int = 20
    aggregation: str = "inverse_mean"

    def __post_init__(self):
        if self.k < 1 or self.k1 < 1 or self.k2 < 1:
            raise ParameterError("neighbor counts must be positive")
        if self.k1 > self.k2:
            raise ParameterError("k1 must not exceed k2")
        if self.aggregation not in ("mean", "inverse_mean"):
            raise ParameterError("aggregation must be 'mean' or 'inverse_mean'")

    def as_dict(self) -> dict:
        return {"k": self.k, "k1": self.k1, "k2": self.k2,
                "aggregation": self.aggregation}


# ---------------------------------------------------------------------------
# correlation (fractal) dimension


def _pair_counts(values: np.ndarray, radii: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Number of ordered pairs (i != j) closer than each radius."""
    n = values.shape[0]
    counts = np.zeros(len(radii), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = np.sort(cdist(values[start:stop], values), axis=None)
        counts += np.searchsorted(d, radii, side="left")
    # every row contributes its zero self-distance to each positive radius
    counts -= n
    return counts


def corr_int(data: Dataset, params: NnParams = NnParams()) -> IdEstimate:
    """Slope of log C(r) versus log r.

    C(r) is the fraction of point pairs closer than r, evaluated on a
    log-spaced grid between the median k1-th and median k2-th neighbor
    distances.  Grid points with C = 0 or C = 1 carry no slope information
    and are excluded from the fit.
    """
    method = "CorrInt"
    n = data.n_obj
    if n < max(params.k2 + 1, 3):
        raise ParameterError(f"CorrInt needs at least {max(params.k2 + 1, 3)} points")
    values = data.values
    if np.all(values == values[0]):
        raise DegenerateData("all points are identical")
    graph = knn(data, params.k2)
    r_lo = float(np.median(graph.distances[:, params.k1 - 1]))
    r_hi = float(np.median(graph.distances[:, params.k2 - 1]))
    if not (0 < r_lo <= r_hi):
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="degenerate radius anchors",
                                  r_lo=r_lo, r_hi=r_hi)
    radii = np.geomspace(r_lo, r_hi, _CORRINT_GRID) if r_hi > r_lo \
        else np.full(_CORRINT_GRID, r_lo)
    c_of_r = _pair_counts(values, radii) / (n * (n - 1))
    # duplicate radii (r_lo == r_hi) would make the fit singular
    distinct = np.concatenate([[True], np.diff(radii) > 0])
    keep = (c_of_r > 0) & (c_of_r < 1) & distinct
    if np.count_nonzero(keep) < 2:
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="fewer than 2 usable grid points",
                                  n_usable=int(np.count_nonzero(keep)))
    fit = fit_loglog(np.log(radii[keep]), np.log(c_of_r[keep]))
    return IdEstimate.of(fit.slope, method, params.as_dict(), **fit.as_diagnostics())


# ---------------------------------------------------------------------------
# maximum likelihood (Levina-Bickel with inverse averaging)


def mle_id(data: Dataset, params: NnParams = NnParams()) -> IdEstimate:
    """k-NN maximum-likelihood estimate averaged over k in [k1, k2].

    The pointwise estimate at neighborhood size k is
    m_k(x) = [(1/(k-1)) * sum_j ln(T_k/T_j)]^-1.  For each k the global value
    aggregates points by inverse averaging (mean of 1/m_k, then reciprocal)
    unless params.aggregation == "mean"; the final estimate is the mean over k.
    """
    method = "MLE"
    if params.k1 < 2:
        raise ParameterError("MLE needs k1 >= 2")
    if data.n_obj <= params.k2:
        raise ParameterError("MLE needs n_obj > k2")
    dists = knn(data, params.k2).distances
    ok = dists[:, 0] > 0  # a zero anywhere in a sorted row implies a zero first
    n_skipped = int(np.count_nonzero(~ok))
    if n_skipped > 0.5 * data.n_obj:
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="more than half the points are duplicates",
                                  n_skipped=n_skipped)
    logs = np.log(dists[ok])
    cums = np.cumsum(logs, axis=1)
    per_k = []
    for k in range(params.k1, params.k2 + 1):
        inv_m = logs[:, k - 1] - cums[:, k - 2] / (k - 1)
        if params.aggregation == "inverse_mean":
            denom = inv_m.mean()
            per_k.append(np.inf if denom == 0 else 1.0 / denom)
        else:
            pos = inv_m > 0
            per_k.append(np.mean(1.0 / inv_m[pos]) if pos.any() else np.inf)
    value = float(np.mean(per_k))
    return IdEstimate.of(value, method, params.as_dict(),
                         n_skipped=n_skipped, per_k=[float(v) for v in per_k])


# ---------------------------------------------------------------------------
# method of moments


def mom_id(data: Dataset, params: NnParams = NnParams()) -> IdEstimate:
    """First-moment estimator d = m1 / (w - m1) per point, averaged.

    w is the k-th neighbor distance and m1 the mean of the first k distances;
    points with m1 = w (all neighbors equidistant) are skipped.
    """
    method = "MOM"
    if data.n_obj <= params.k:
        raise ParameterError("MOM needs n_obj > k")
    dists = knn(data, params.k).distances
    w = dists[:, -1]
    m1 = dists.mean(axis=1)
    ok = (w > 0) & (w - m1 > 0)
    n_skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="all points skipped", n_skipped=n_skipped)
    d = m1[ok] / (w[ok] - m1[ok])
    return IdEstimate.of(float(d.mean()), method, params.as_dict(),
                         n_skipped=n_skipped)


# ---------------------------------------------------------------------------
# manifold-adaptive fractal dimension


def mada_id(data: Dataset, params: NnParams = NnParams()) -> IdEstimate:
    """ln2 / ln(T_k / T_ceil(k/2)) per point, combined by harmonic mean."""
    method = "MADA"
    if params.k < 2:
        raise ParameterError("MADA needs k >= 2")
    if data.n_obj <= params.k:
        raise ParameterError("MADA needs n_obj > k")
    dists = knn(data, params.k).distances
    half = math.ceil(params.k / 2)
    t_k = dists[:, params.k - 1]
    t_h = dists[:, half - 1]
    ok = (t_h > 0) & (t_k > t_h)
    n_skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="all points skipped", n_skipped=n_skipped)
    d = math.log(2.0) / np.log(t_k[ok] / t_h[ok])
    value = len(d) / float(np.sum(1.0 / d))
    return IdEstimate.of(value, method, params.as_dict(), n_skipped=n_skipped)


# ---------------------------------------------------------------------------
# tight local estimation


def _tle_point(center: np.ndarray, nb: np.ndarray, dists: np.ndarray) -> float:
    """Pointwise TLE estimate, NaN when the neighborhood is unusable.

    Every ordered neighbor pair (v, w) contributes two log-ratio terms: the
    distance from v to w, and from the reflection 2*center - v to w, each
    rescaled by where the ray from the (reflected) viewpoint through w exits
    the radius-r ball around the center.  The estimate is the negative
    reciprocal of the mean term.
    """
    r = dists[-1]
    if r <= 0:
        return math.nan
    k = len(dists)
    v_mat = cdist(nb, nb)
    di = np.broadcast_to(dists[:, None], (k, k))
    dj = np.broadcast_to(dists[None, :], (k, k))
    v2 = v_mat**2
    z2 = np.maximum(2 * di**2 + 2 * dj**2 - v2, 0.0)
    room = r**2 - di**2  # zero when the viewpoint sits on the boundary

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c_s = di**2 + v2 - dj**2
        s = r * (np.sqrt(np.maximum(c_s**2 + 4 * v2 * room, 0.0)) - c_s) / (2 * room)
        c_t = di**2 + z2 - dj**2
        t = r * (np.sqrt(np.maximum(c_t**2 + 4 * z2 * room, 0.0)) - c_t) / (2 * room)

        on_boundary = di == r
        s = np.where(on_boundary, r * v2 / (r**2 + v2 - dj**2), s)
        t = np.where(on_boundary, r * z2 / (r**2 + z2 - dj**2), t)
    # degenerate viewpoints/targets collapse to the plain distance
    s = np.where(di == 0, dj, s)
    t = np.where(di == 0, dj, t)
    s = np.where(dj == 0, di, s)
    t = np.where(dj == 0, di, t)

    off_diag = ~np.eye(k, dtype=bool)
    usable = off_diag & (v_mat > 0)
    ratios = np.concatenate([s[usable], t[usable]]) / r
    ratios = ratios[np.isfinite(ratios) & (ratios >= _TINY_TERM)]
    if ratios.size == 0:
        return math.nan
    mean_term = float(np.mean(np.log(ratios)))
    if mean_term >= 0:
        return math.nan
    return -1.0 / mean_term


def tle_id(data: Dataset, params: NnParams = NnParams()) -> IdEstimate:
    """Tight-locality estimator averaged over points.

    Pointwise results that are non-finite or non-positive are skipped and
    counted; more than 50% skipped invalidates the estimate.
    """
    method = "TLE"
    if params.k < 3:
        raise ParameterError("TLE needs k >= 3")
    if data.n_obj <= params.k:
        raise ParameterError("TLE needs n_obj > k")
    graph = knn(data, params.k)
    values = data.values
    point_ids = np.empty(data.n_obj)
    for i in range(data.n_obj):
        point_ids[i] = _tle_point(values[i], values[graph.indices[i]],
                                  graph.distances[i])
    ok = np.isfinite(point_ids) & (point_ids > 0)
    n_skipped = int(np.count_nonzero(~ok))
    if n_skipped > 0.5 * data.n_obj or not ok.any():
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="more than half the points skipped",
                                  n_skipped=n_skipped,
                                  skip_rate=n_skipped / data.n_obj)
    return IdEstimate.of(float(point_ids[ok].mean()), method, params.as_dict(),
                         n_skipped=n_skipped, skip_rate=n_skipped / data.n_obj)


# ---------------------------------------------------------------------------
# two-nearest-neighbor estimator


def twonn_id(data: Dataset, discard_fraction: float = 0.1) -> IdEstimate:
    """Through-origin fit of -ln(1 - F(mu)) on ln mu, mu = T2/T1.

    The largest ``discard_fraction`` of the mu values is discarded before the
    fit; the closed-form likelihood estimate n / sum(ln mu) is kept in the
    diagnostics.
    """
    method = "TwoNN"
    if data.n_obj < 10:
        raise ParameterError("TwoNN needs at least 10 points")
    if not 0 <= discard_fraction < 1:
        raise ParameterError("discard_fraction must be in [0, 1)")
    params = {"discard_fraction": discard_fraction}
    dists = knn(data, 2).distances
    ok = dists[:, 0] > 0
    n_skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return IdEstimate.invalid(method, params, reason="all first neighbors at "
                                  "zero distance", n_skipped=n_skipped)
    mu = np.sort(dists[ok, 1] / dists[ok, 0])
    n_drop = int(math.floor(discard_fraction * len(mu)))
    kept = mu[: len(mu) - n_drop] if n_drop else mu
    if kept.size < 2 or np.all(kept == 1.0):
        return IdEstimate.invalid(method, params, reason="mu values carry no "
                                  "information", n_skipped=n_skipped)
    n = kept.size
    x = np.log(kept)
    y = -np.log(1.0 - np.arange(1, n + 1) / (n + 1.0))
    sxx = float(np.sum(x * x))
    if sxx == 0:
        return IdEstimate.invalid(method, params, reason="all mu equal 1",
                                  n_skipped=n_skipped)
    slope = float(np.sum(x * y) / sxx)
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    log_sum = float(np.sum(x))
    return IdEstimate.of(
        slope, method, params,
        n_skipped=n_skipped, n_used=n,
        mle=(n / log_sum if log_sum > 0 else math.inf),
        r2=(1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot),
    )


# ---------------------------------------------------------------------------
# minimum neighbor distance, maximum likelihood


def _mind_loglik(d: float, log_rho: np.ndarray, k: int) -> float:
    n = log_rho.size
    with np.errstate(over="ignore"):
        tail = np.log1p(-np.exp(d * log_rho))
    return n * math.log(k * d) + (d - 1.0) * float(log_rho.sum()) \
        + (k - 1.0) * float(tail.sum())


def mind_ml_id(data: Dataset, params: NnParams = NnParams(),
               version: str = "MLi") -> IdEstimate:
    """Likelihood of rho = T1/Tk maximized over the dimension.

    MLi returns the best integer d in [1, D_cap]; MLk the continuous
    maximizer on the same interval, with D_cap = min(n_var, 50).
    """
    if version not in ("MLi", "MLk"):
        raise ParameterError("version must be 'MLi' or 'MLk'")
    method = f"MiND_{version}"
    k = params.k
    if k < 2:
        raise ParameterError("MiND needs k >= 2")
    if data.n_obj <= k:
        raise ParameterError("MiND needs n_obj > k")
    dists = knn(data, k).distances
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = dists[:, 0] / dists[:, -1]
    ok = np.isfinite(rho) & (rho > 0) & (rho < 1)
    n_skipped = int(np.count_nonzero(~ok))
    if not ok.any():
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="no usable rho values",
                                  n_skipped=n_skipped)
    log_rho = np.log(rho[ok])
    d_cap = min(data.n_var, 50)
    if d_cap == 1:
        return IdEstimate.of(1.0, method, params.as_dict(), d_cap=1,
                             n_skipped=n_skipped)
    if version == "MLi":
        grid = np.arange(1, d_cap + 1, dtype=float)
        liks = [_mind_loglik(d, log_rho, k) for d in grid]
        best = int(np.argmax(liks))
        return IdEstimate.of(float(grid[best]), method, params.as_dict(),
                             d_cap=d_cap, loglik=float(liks[best]),
                             n_skipped=n_skipped)
    res = minimize_scalar(lambda d: -_mind_loglik(d, log_rho, k),
                          bounds=(1.0, float(d_cap)), method="bounded",
                          options={"xatol": 1e-6})
    candidates = [(float(res.x), -float(res.fun)),
                  (1.0, _mind_loglik(1.0, log_rho, k)),
                  (float(d_cap), _mind_loglik(float(d_cap), log_rho, k))]
    value, lik = max(candidates, key=lambda c: c[1])
    return IdEstimate.of(value, method, params.as_dict(), d_cap=d_cap,
                         loglik=lik, n_skipped=n_skipped)


# ---------------------------------------------------------------------------
# k-NN-graph length scaling


def _graph_id_from_lengths(sizes: np.ndarray, lengths: np.ndarray, gamma: float,
                           n_var: int) -> tuple[float, dict, bool]:
    fit = fit_loglog(np.log(sizes), np.log(lengths))
    diagnostics = fit.as_diagnostics()
    if fit.slope >= 1:
        return math.nan, diagnostics, False
    value = min(max(gamma / (1.0 - fit.slope), 1.0), float(n_var))
    return value, diagnostics, True


def knn_graph_id(data: Dataset, k: int = 5, gamma: float = 1.0,
                 n_subsamples: int = 10, sizes: list[int] | None = None,
                 seed: int = 0) -> IdEstimate:
    """Dimension from the growth rate of total k-NN-graph edge weight.

    For subsample sizes n the summed edge weight scales like n^(1 - gamma/d);
    the fitted slope a gives d = gamma / (1 - a), clamped to [1, n_var].
    """
    method = "KNN"
    n = data.n_obj
    if k < 1 or gamma <= 0 or n_subsamples < 1:
        raise ParameterError("k, gamma and n_subsamples must be positive")
    if sizes is None:
        sizes = np.unique(np.round(np.geomspace(max(n // 4, k + 2), n, 5))
                          .astype(int)).tolist()
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ParameterError("need at least 2 subsample sizes to regress")
    if max(sizes) > n:
        raise ParameterError("subsample sizes cannot exceed n_obj")
    if min(sizes) <= k:
        raise ParameterError("every subsample size must exceed k")
    params = {"k": k, "gamma": gamma, "n_subsamples": n_subsamples,
              "sizes": list(sizes)}
    rng = substream(seed, "knn_graph")
    mean_lengths = np.empty(len(sizes))
    for si, size in enumerate(sizes):
        totals = np.empty(n_subsamples)
        for rep in range(n_subsamples):
            rows = rng.choice(n, size=size, replace=False) if size < n \
                else np.arange(n)
            sub = Dataset(data.values[rows], name=data.name)
            totals[rep] = float(np.sum(knn(sub, k).distances**gamma))
        mean_lengths[si] = totals.mean()
    if np.any(mean_lengths <= 0):
        return IdEstimate.invalid(method, params,
                                  reason="zero total edge weight", seed=seed)
    value, diagnostics, ok = _graph_id_from_lengths(
        np.asarray(sizes, dtype=float), mean_lengths, gamma, data.n_var)
    diagnostics["seed"] = seed
    if not ok:
        return IdEstimate.invalid(method, params,
                                  reason="scaling slope >= 1", **diagnostics)
    return IdEstimate.of(value, method, params, **diagnostics)
