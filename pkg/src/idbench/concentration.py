"""Concentration-of-measure estimators: FisherS, ESS and DANCo.

FisherS maps the fraction of linearly inseparable point pairs to the
dimension of the sphere that would produce it.  ESS compares the mean sine of
neighbor-pair angles with its expectation for uniform directions.  DANCo
matches minimum-neighbor-distance likelihood and angle-concentration
statistics against references calibrated on known-dimension spheres.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gammaln, i0e, i1e

from .errors import ParameterError
from .geometry import knn
from .seeding import substream
from .types import Dataset, IdEstimate

_CACHE_ENV = "IDBENCH_CACHE_DIR"
_CACHE_FORMAT_VERSION = 1
_N_FLOOR = 1e-2    # smallest dimension the sphere model is inverted over
_N_CEIL = 1e7      # bracket growth limit for the inversion
_TAU_CAP = 1e6     # concentration cap for numerically circular angle samples


# ---------------------------------------------------------------------------
# FisherS


@dataclass(frozen=True)
class FisherParams:
    """Separability threshold(s) and preprocessing condition limit."""

    alpha: float = 0.8
    alpha_grid: tuple = tuple(np.round(np.arange(0.60, 0.99, 0.02), 2))
    condition_threshold: float = 10.0
    max_pair_rows: int = 5000

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        if not grid or any(not 0 < a < 1 for a in grid):
            raise ParameterError("every alpha must lie in (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("alpha_grid must be strictly ascending")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.condition_threshold <= 0:
            raise ParameterError("condition_threshold must be positive")
        object.__setattr__(self, "alpha_grid", grid)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "condition_threshold": self.condition_threshold}


def separability_model(alpha: float, n: float) -> float:
    """Mean inseparability probability of a uniform n-sphere sample at margin alpha.

    Strictly decreasing in n for every alpha in (0, 1), which makes the
    inversion a bracketed root find.
    """
    return math.exp(_log_separability_model(alpha, n))


def _log_separability_model(alpha: float, n: float) -> float:
    return 0.5 * (n - 1.0) * math.log1p(-alpha * alpha) - math.log(alpha) \
        - 0.5 * math.log(2.0 * math.pi * n)


def invert_separability_model(alpha: float, p_target: float) -> float:
    """Dimension n with model probability p_target at margin alpha, or NaN."""
    if not p_target > 0:
        return math.nan
    log_t = math.log(p_target)
    if log_t >= _log_separability_model(alpha, _N_FLOOR):
        return math.nan  # p is at or above the model maximum: not invertible
    hi = 1.0
    while _log_separability_model(alpha, hi) > log_t:
        hi *= 2.0
        if hi > _N_CEIL:
            return math.nan
    lo = max(_N_FLOOR, hi / 2.0 if hi > 1.0 else _N_FLOOR)
    if _log_separability_model(alpha, lo) < log_t:
        lo = _N_FLOOR
    return float(brentq(lambda n: _log_separability_model(alpha, n) - log_t,
                        lo, hi, xtol=1e-12, rtol=1e-14))


def _whiten_to_sphere(data: Dataset, condition_threshold: float) -> np.ndarray:
    """Center, keep well-conditioned principal axes, whiten, project to sphere."""
    centered = data.values - data.values.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    eig = sv**2 / max(data.n_obj - 1, 1)
    keep = eig > 0
    if keep.any():
        keep &= eig[0] / np.maximum(eig, np.finfo(float).tiny) <= condition_threshold
    if not keep.any():
        return np.zeros((0, 1))
    scores = centered @ vt[keep].T
    scores /= np.sqrt(eig[keep])
    norms = np.linalg.norm(scores, axis=1)
    ok = norms > 0
    return scores[ok] / norms[ok, None]


def _inseparable_fractions(points: np.ndarray, alphas: np.ndarray,
                           chunk: int = 512) -> np.ndarray:
    """Fraction of ordered pairs (i != j) with <x_i, x_j> > alpha, per alpha."""
    n = points.shape[0]
    counts = np.zeros(len(alphas), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        gram = np.sort(points[start:stop] @ points.T, axis=None)
        counts += gram.size - np.searchsorted(gram, alphas, side="right")
    # self pairs have <x, x> = 1 > alpha and must not be counted
    counts -= n
    return counts / float(n * (n - 1))


def fisher_s_id(data: Dataset, params: FisherParams = FisherParams(),
                seed: int = 0) -> IdEstimate:
    """Fisher-separability dimension at params.alpha, full profile in diagnostics.

    For more than params.max_pair_rows points the pair statistics are taken
    over a seeded row subsample (ordered pairs among max_pair_rows rows).
    """
    method = "FisherS"
    if data.n_obj < 10:
        raise ParameterError("FisherS needs at least 10 points")
    sphere = _whiten_to_sphere(data, params.condition_threshold)
    if sphere.shape[0] < 2:
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="no usable directions after whitening")
    if sphere.shape[0] > params.max_pair_rows:
        rng = substream(seed, "fisher_pairs")
        rows = rng.choice(sphere.shape[0], params.max_pair_rows, replace=False)
        sphere = sphere[rows]

    alphas = np.array(sorted(set(params.alpha_grid) | {params.alpha}))
    p_alpha = _inseparable_fractions(sphere, alphas)
    profile = np.array([invert_separability_model(a, p) if p > 0 else math.nan
                        for a, p in zip(alphas, p_alpha)])

    sel = int(np.where(alphas == params.alpha)[0][0])
    p_sel = float(p_alpha[sel])
    diagnostics = {
        "alpha_grid": alphas.tolist(),
        "p_profile": p_alpha.tolist(),
        "n_profile": profile.tolist(),
        "saturated": False,
        "n_pair_rows": int(sphere.shape[0]),
    }
    if p_sel == 0.0:
        # fully separable at the chosen margin: floor at one pair in 2 N^2
        diagnostics["saturated"] = True
        p_sel = 1.0 / (2.0 * data.n_obj**2)
    value = invert_separability_model(params.alpha, p_sel)
    if math.isnan(value):
        return IdEstimate.invalid(method, params.as_dict(),
                                  reason="inseparability above the model maximum",
                                  **diagnostics)
    return IdEstimate.of(value, method, params.as_dict(), **diagnostics)


# ---------------------------------------------------------------------------
# ESS (expected simplex skewness, pairwise-sine statistic)


def ess_theoretical_sin(d: float) -> float:
    """E[sin(theta)] between two independent uniform directions in R^d."""
    if d <= 1.0:
        return 0.0
    return math.exp(2.0 * gammaln(d / 2.0) - gammaln((d + 1.0) / 2.0)
                    - gammaln((d - 1.0) / 2.0))


def ess_dimension_from_sin(s_hat: float, d_max: int) -> tuple[float, bool]:
    """Invert the theoretical mean sine; returns (dimension, clamped?)."""
    if s_hat <= 0.0:
        return 1.0, False
    if s_hat >= ess_theoretical_sin(d_max):
        return float(d_max), True
    return float(brentq(lambda d: ess_theoretical_sin(d) - s_hat,
                        1.0 + 1e-9, float(d_max), xtol=1e-10)), False


def _neighborhood_mean_sin(members: np.ndarray) -> float:
    """Mean sine of angles between centroid-to-member vectors; NaN if unusable."""
    vectors = members - members.mean(axis=0)
    norms = np.linalg.norm(vectors, axis=1)
    vectors = vectors[norms > 0] / norms[norms > 0, None]
    m = vectors.shape[0]
    if m < 2:
        return math.nan
    cos = np.clip(vectors @ vectors.T, -1.0, 1.0)
    iu = np.triu_indices(m, k=1)
    return float(np.mean(np.sqrt(1.0 - cos[iu] ** 2)))


def ess_id(data: Dataset, k: int = 20, d_max: int = 25) -> IdEstimate:
    """Mean over neighborhoods of the dimension matching the observed sine statistic.

    Each neighborhood is the query point plus its k nearest neighbors,
    re-centered at the neighborhood centroid.  Observed statistics above the
    d_max theoretical value are clamped and counted.
    """
    method = "ESS"
    if k < 3:
        raise ParameterError("ESS needs k >= 3")
    if data.n_obj <= k:
        raise ParameterError("ESS needs n_obj > k")
    if d_max < 1:
        raise ParameterError("d_max must be positive")
    graph = knn(data, k)
    values = data.values
    dims = np.empty(data.n_obj)
    n_clamped = 0
    for i in range(data.n_obj):
        members = values[np.concatenate([[i], graph.indices[i]])]
        s_hat = _neighborhood_mean_sin(members)
        if math.isnan(s_hat):
            dims[i] = math.nan
            continue
        dims[i], clamped = ess_dimension_from_sin(s_hat, d_max)
        n_clamped += clamped
    ok = np.isfinite(dims)
    params = {"k": k, "d_max": d_max}
    if not ok.any():
        return IdEstimate.invalid(method, params, reason="no usable neighborhoods")
    return IdEstimate.of(float(dims[ok].mean()), method, params,
                         n_clamped=n_clamped,
                         n_skipped=int(np.count_nonzero(~ok)))


# ---------------------------------------------------------------------------
# DANCo


@dataclass(frozen=True)
class DancoCalibration:
    """Reference statistics on unit spheres of every candidate dimension.

    cached_stats maps each candidate d to (fitted likelihood dimension,
    angle mean nu, angle concentration tau), averaged over samples_per_dim
    independent draws of n_cal points on the d-sphere.
    """

    d_max: int
    k: int = 10
    samples_per_dim: int = 20
    n_cal: int = 500
    seed: int = 0
    cached_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d_max < 1:
            raise ParameterError("d_max must be positive")
        if self.k < 2 or self.samples_per_dim < 1 or self.n_cal <= self.k:
            raise ParameterError("invalid calibration sizes")

    @property
    def candidate_dims(self) -> range:
        return range(1, self.d_max + 1)

    def covers(self, d_max_needed: int) -> bool:
        return all(d in self.cached_stats for d in range(1, d_max_needed + 1))


def sphere_sample(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n points uniform on the d-dimensional unit sphere in R^(d+1)."""
    x = rng.standard_normal((n, d + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _vm_concentration(r: float) -> float:
    """Moment (mean resultant length) estimate of the von Mises concentration."""
    r = min(max(r, 0.0), 1.0 - 1e-12)
    if r < 0.53:
        tau = 2.0 * r + r**3 + 5.0 * r**5 / 6.0
    elif r < 0.85:
        tau = -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    else:
        tau = 1.0 / (r**3 - 4.0 * r**2 + 3.0 * r)
    return float(min(max(tau, 1e-12), _TAU_CAP))


def _mind_fit(log_rho: np.ndarray, k: int, bound: float = 100.0) -> float:
    """Continuous likelihood dimension of rho = T1/Tk samples."""
    def neg_loglik(d: float) -> float:
        with np.errstate(over="ignore"):
            tail = np.log1p(-np.exp(d * log_rho))
        return -(log_rho.size * math.log(k * d) + (d - 1.0) * log_rho.sum()
                 + (k - 1.0) * tail.sum())

    res = minimize_scalar(neg_loglik, bounds=(1.0, bound), method="bounded",
                          options={"xatol": 1e-6})
    best = min([(float(res.fun), float(res.x)), (neg_loglik(1.0), 1.0),
                (neg_loglik(bound), bound)])
    return best[1]


def _danco_stats(data: Dataset, k: int) -> tuple[float, float, float] | None:
    """(likelihood dimension, angle mean, angle concentration) or None."""
    graph = knn(data, k)
    dists = graph.distances
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = dists[:, 0] / dists[:, -1]
    ok = np.isfinite(rho) & (rho > 0) & (rho < 1)
    if not ok.any():
        return None
    dim_hat = _mind_fit(np.log(rho[ok]), k)

    values = data.values
    iu = np.triu_indices(k, k=1)
    cos_sum = 0.0
    sin_sum = 0.0
    n_angles = 0
    for i in range(data.n_obj):
        vec = values[graph.indices[i]] - values[i]
        norms = np.linalg.norm(vec, axis=1)
        if np.count_nonzero(norms > 0) < 2:
            continue
        unit = np.zeros_like(vec)
        nz = norms > 0
        unit[nz] = vec[nz] / norms[nz, None]
        cos = np.clip(unit @ unit.T, -1.0, 1.0)[iu]
        pair_ok = (norms[iu[0]] > 0) & (norms[iu[1]] > 0)
        if not pair_ok.any():
            continue
        theta = np.arccos(cos[pair_ok])
        cos_sum += float(np.cos(theta).sum())
        sin_sum += float(np.sin(theta).sum())
        n_angles += int(pair_ok.sum())
    if n_angles == 0:
        return None
    c_bar, s_bar = cos_sum / n_angles, sin_sum / n_angles
    r = math.hypot(c_bar, s_bar)
    nu = math.atan2(s_bar, c_bar)
    return dim_hat, nu, _vm_concentration(r)


def _kl_norm(d1: float, d2: float, k: int, nodes: int = 512) -> float:
    """KL divergence between the rho likelihoods at dimensions d1 and d2."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    rho = 0.5 * (x + 1.0)
    w = 0.5 * w
    log_rho = np.log(rho)

    def log_g(d: float) -> np.ndarray:
        with np.errstate(over="ignore"):
            tail = np.log1p(-np.exp(d * log_rho))
        return math.log(k * d) + (d - 1.0) * log_rho + (k - 1.0) * tail

    lg1 = log_g(d1)
    integrand = np.exp(lg1) * (lg1 - log_g(d2))
    return max(float(np.sum(w * integrand)), 0.0)


def _kl_von_mises(nu1: float, tau1: float, nu2: float, tau2: float) -> float:
    """Closed-form KL divergence between two von Mises distributions."""
    log_i0_1 = math.log(i0e(tau1)) + tau1
    log_i0_2 = math.log(i0e(tau2)) + tau2
    a1 = i1e(tau1) / i0e(tau1)
    return max(log_i0_2 - log_i0_1 + a1 * (tau1 - tau2 * math.cos(nu1 - nu2)), 0.0)


def danco_calibrate(ambient_dim: int, cal: DancoCalibration) -> DancoCalibration:
    """Fill the calibration cache for candidate dimensions 1..min(d_max, ambient_dim).

    Deterministic given cal.seed: the same seed reproduces the statistics
    bit-identically.
    """
    if ambient_dim < 1:
        raise ParameterError("ambient_dim must be positive")
    top = min(cal.d_max, ambient_dim)
    if top < 1:
        raise ParameterError("no candidate dimensions to calibrate")
    stats: dict[int, tuple[float, float, float]] = {}
    for d in range(1, top + 1):
        acc = np.zeros(3)
        for rep in range(cal.samples_per_dim):
            rng = substream(cal.seed, "danco_cal", str(d), str(rep))
            sample = Dataset(sphere_sample(rng, cal.n_cal, d),
                             name=f"danco_cal_d{d}_r{rep}")
            one = _danco_stats(sample, cal.k)
            if one is None:  # pragma: no cover - sphere samples are never degenerate
                continue
            acc += np.asarray(one)
        stats[d] = tuple(float(v) for v in acc / cal.samples_per_dim)
    return replace(cal, d_max=top, cached_stats=stats)


def danco_id(data: Dataset, k: int, cal: DancoCalibration) -> IdEstimate:
    """Candidate dimension minimizing the summed norm + angle KL divergence."""
    method = "DANCo"
    if data.n_obj <= k:
        raise ParameterError("DANCo needs n_obj > k")
    if k != cal.k:
        raise ParameterError(f"calibration was built for k={cal.k}, got k={k}")
    top = min(data.n_var, cal.d_max)
    if not cal.covers(top):
        raise ParameterError(f"calibration does not cover dimensions 1..{top}")
    params = {"k": k, "d_max": cal.d_max, "n_cal": cal.n_cal,
              "samples_per_dim": cal.samples_per_dim, "cal_seed": cal.seed}
    stats = _danco_stats(data, k)
    if stats is None:
        return IdEstimate.invalid(method, params,
                                  reason="degenerate neighborhood statistics")
    dim_hat, nu, tau = stats
    kl = {}
    for d in range(1, top + 1):
        ref_dim, ref_nu, ref_tau = cal.cached_stats[d]
        kl[d] = _kl_norm(dim_hat, ref_dim, k) \
            + _kl_von_mises(nu, tau, ref_nu, ref_tau)
    best = min(kl, key=lambda d: (kl[d], d))
    return IdEstimate.of(float(best), method, params,
                         dim_likelihood=dim_hat, angle_mean=nu,
                         angle_concentration=tau,
                         kl_profile={str(d): float(v) for d, v in kl.items()})


# ---------------------------------------------------------------------------
# calibration cache persistence

_cache_lock = threading.Lock()


def default_cache_dir() -> Path:
    env = os.environ.get(_CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "idbench"


def _cache_path(cache_dir: Path, cal: DancoCalibration) -> Path:
    name = (f"danco_v{_CACHE_FORMAT_VERSION}_dmax{cal.d_max}_k{cal.k}"
            f"_ncal{cal.n_cal}_spd{cal.samples_per_dim}_seed{cal.seed}.json")
    return cache_dir / name


def save_calibration(cal: DancoCalibration, cache_dir: Path | None = None) -> Path:
    """Persist a calibration; the file is regenerable and version-checked."""
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = _cache_path(cache_dir, cal)
    payload = {
        "format_version": _CACHE_FORMAT_VERSION,
        "d_max": cal.d_max, "k": cal.k, "n_cal": cal.n_cal,
        "samples_per_dim": cal.samples_per_dim, "seed": cal.seed,
        "stats": {str(d): list(v) for d, v in sorted(cal.cached_stats.items())},
    }
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_calibration(path: Path) -> DancoCalibration | None:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if payload.get("format_version") != _CACHE_FORMAT_VERSION:
        return None
    return DancoCalibration(
        d_max=payload["d_max"], k=payload["k"],
        samples_per_dim=payload["samples_per_dim"], n_cal=payload["n_cal"],
        seed=payload["seed"],
        cached_stats={int(d): tuple(v) for d, v in payload["stats"].items()},
    )


def get_calibration(ambient_dim: int, d_max: int | None = None, k: int = 10,
                    n_cal: int = 500, samples_per_dim: int = 20, seed: int = 0,
                    cache_dir: Path | None = None) -> DancoCalibration:
    """Load a cached calibration or compute and persist one."""
    top = min(d_max if d_max is not None else 25, ambient_dim)
    top = max(top, 1)
    spec = DancoCalibration(d_max=top, k=k, samples_per_dim=samples_per_dim,
                            n_cal=n_cal, seed=seed)
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    path = _cache_path(cache_dir, spec)
    with _cache_lock:
        cached = load_calibration(path)
        if cached is not None and cached.covers(top):
            return cached
        cal = danco_calibrate(ambient_dim, spec)
        save_calibration(cal, cache_dir)
    return cal
