"""PCA-spectrum component selection rules.

Seven rules turn a covariance spectrum into a dimension: Fukunaga-Olsen
threshold, Fan's ratio-and-variance rule, largest eigenvalue gap, cumulative
variance ratio, participation ratio, Kaiser's mean-eigenvalue rule and the
broken-stick baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, ParameterError
from .geometry import covariance_spectrum
from .types import Dataset, IdEstimate, Spectrum

#: variant tag -> method id used in reports
METHOD_IDS = {
    "FO": "lpca_FO",
    "Fan": "lpca_Fan",
    "maxgap": "lpca_maxgap",
    "ratio": "lpca_ratio",
    "participation_ratio": "lpca_PR",
    "Kaiser": "lpca_Kaiser",
    "broken_stick": "lpca_BS",
}


@dataclass(frozen=True)
class LpcaVariant:
    """A selection rule plus its thresholds.

    alpha_fo: keep eigenvalues >= alpha_fo * lambda_1.
    alpha_ratio: keep the smallest k explaining >= 1 - alpha_ratio variance.
    alpha_fan / beta_fan: Fan's gap threshold and minimum explained variance.
    """

    tag: str
    alpha_fo: float = 0.05
    alpha_ratio: float = 0.05
    alpha_fan: float = 10.0
    beta_fan: float = 0.8

    def __post_init__(self):
        if self.tag not in METHOD_IDS:
            raise ParameterError(f"unknown lPCA variant {self.tag!r}; "
                                 f"choose from {sorted(METHOD_IDS)}")
        if not 0 < self.alpha_fo < 1:
            raise ParameterError("alpha_fo must be in (0, 1)")
        if not 0 < self.alpha_ratio < 1:
            raise ParameterError("alpha_ratio must be in (0, 1)")
        if self.alpha_fan <= 1:
            raise ParameterError("alpha_fan must exceed 1")
        if not 0 < self.beta_fan < 1:
            raise ParameterError("beta_fan must be in (0, 1)")

    @property
    def method_id(self) -> str:
        return METHOD_IDS[self.tag]

    def params_dict(self) -> dict:
        out = {"variant": self.tag}
        if self.tag == "FO":
            out["alpha_fo"] = self.alpha_fo
        elif self.tag == "ratio":
            out["alpha_ratio"] = self.alpha_ratio
        elif self.tag == "Fan":
            out.update(alpha_fan=self.alpha_fan, beta_fan=self.beta_fan,
                       alpha_ratio=self.alpha_ratio)
        return out


def broken_stick_baseline(d: int) -> np.ndarray:
    """Expected ordered fragment proportions of a unit stick broken into d."""
    inv = 1.0 / np.arange(1, d + 1)
    return np.cumsum(inv[::-1])[::-1] / d


def lpca_select(spectrum: Spectrum, variant: LpcaVariant) -> IdEstimate:
    """Apply one selection rule to a spectrum."""
    if spectrum.total <= 0:
        raise DegenerateSpectrum("spectrum has zero total variance")
    eig = spectrum.eigenvalues
    p = spectrum.proportions
    d = len(eig)
    diagnostics: dict = {}
    tag = variant.tag

    if tag == "FO":
        value = int(np.count_nonzero(eig >= variant.alpha_fo * eig[0]))
    elif tag == "ratio":
        value = _ratio_rule(p, variant.alpha_ratio)
    elif tag == "maxgap":
        value = _maxgap_rule(eig, diagnostics)
    elif tag == "Kaiser":
        value = int(np.count_nonzero(eig > eig.mean()))
        value = max(value, 1)
    elif tag == "participation_ratio":
        value = float(eig.sum() ** 2 / np.sum(eig**2))
    elif tag == "broken_stick":
        baseline = broken_stick_baseline(d)
        above = p > baseline
        value = 0
        while value < d and above[value]:
            value += 1
        value = max(value, 1)
    elif tag == "Fan":
        value = _fan_rule(eig, p, variant, diagnostics)
    else:  # pragma: no cover - guarded by LpcaVariant
        raise ParameterError(f"unknown variant {tag!r}")

    return IdEstimate.of(value, variant.method_id, variant.params_dict(),
                         **diagnostics)


def _ratio_rule(p: np.ndarray, alpha_ratio: float) -> int:
    cum = np.cumsum(p)
    hits = np.nonzero(cum >= 1.0 - alpha_ratio)[0]
    return int(hits[0]) + 1 if hits.size else len(p)


def _maxgap_rule(eig: np.ndarray, diagnostics: dict) -> int:
    rank = int(np.count_nonzero(eig))
    if rank < len(eig):
        # a gap into a zero eigenvalue is infinite, so the rule returns rank
        if rank == 0:
            return 1
        diagnostics["gap"] = float("inf")
        return max(rank, 1)
    if len(eig) == 1:
        return 1
    gaps = eig[:-1] / eig[1:]
    best = int(np.argmax(gaps))
    diagnostics["gap"] = float(gaps[best])
    return best + 1


def _fan_rule(eig: np.ndarray, p: np.ndarray, variant: LpcaVariant,
              diagnostics: dict) -> int:
    cum = np.cumsum(p)
    # candidates need a positive next eigenvalue, matching the maxgap domain
    for k in range(1, len(eig)):
        if eig[k] <= 0:
            break
        if eig[k - 1] / eig[k] > variant.alpha_fan and cum[k - 1] >= variant.beta_fan:
            return k
    diagnostics["fan_fallback"] = True
    return _ratio_rule(p, variant.alpha_ratio)


def lpca_estimate(data: Dataset, variant: LpcaVariant) -> IdEstimate:
    """Covariance spectrum followed by one selection rule."""
    return lpca_select(covariance_spectrum(data), variant)
