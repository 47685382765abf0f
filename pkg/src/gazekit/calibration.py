"""Equal-probability-mass quantile test for confidence calibration.

Pixels of a predicted density are sorted by probability and split into
K bins of (approximately) equal mass; a calibrated model sends the same
number of fixations into each bin. Discrete pixels cannot be split, so
bin masses deviate from 1/K by up to the largest pixel mass; the
chi-square null therefore uses the actual bin masses, which reduces to
the textbook N/K form whenever masses are exactly equal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.stats import chi2, spearmanr

from .errors import BadValue, MissingDensity, NoFixations, TooFewPixels, ZeroDensityAtFixation
from .grids import DensityGrid, FixationSet

CHI_SQUARE_LEVEL = 0.95


def quantile_partition(density: DensityGrid, k: int) -> np.ndarray:
    """Bin index per pixel (0 = lowest-probability quantile).

    Pixels are walked in ascending probability order (ties broken by
    row-major index); a pixel joins bin j while the cumulative mass
    before it is below (j+1)/K. A pixel spanning several quantiles stays
    in the first, so degenerate densities can leave later bins empty.
    """
    if k < 2:
        raise BadValue(f"need at least 2 quantile bins, got {k}")
    h, w = density.shape
    if h * w < k:
        raise TooFewPixels(f"{h * w} pixels cannot fill {k} bins")
    p = density.prob().ravel()
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    before = np.concatenate([[0.0], np.cumsum(sorted_p)[:-1]])
    bins_sorted = np.minimum(np.floor(before * k), k - 1).astype(np.int64)
    bins = np.empty(h * w, dtype=np.int64)
    bins[order] = bins_sorted
    return bins.reshape(h, w)


def partition_masses(density: DensityGrid, bins: np.ndarray, k: int) -> np.ndarray:
    """Probability mass per bin under the density."""
    return np.bincount(bins.ravel(), weights=density.prob().ravel(), minlength=k)


@dataclass(frozen=True)
class CalibrationHistogram:
    bins: tuple[int, ...]            # observed fixations per quantile
    bin_masses: tuple[float, ...]    # fixation-weighted mean mass per bin
    expected: tuple[float, ...]      # expected counts under actual masses
    expected_per_bin: float          # idealized N/K
    n_fixations: int
    chi_square: float
    critical_value: float
    verdict: str                     # overconfident | underconfident | calibrated

    def to_json_dict(self) -> dict:
        return {
            "k": len(self.bins),
            "bins": list(self.bins),
            "bin_masses": list(self.bin_masses),
            "expected": list(self.expected),
            "expected_per_bin": self.expected_per_bin,
            "n_fixations": self.n_fixations,
            "chi_square": self.chi_square,
            "critical_value": self.critical_value,
            "verdict": self.verdict,
        }


def calibration_histogram(
    densities: Mapping[str, DensityGrid],
    fixations: FixationSet,
    k: int,
) -> CalibrationHistogram:
    """Aggregate fixation counts per probability quantile over images.

    The verdict compares the chi-square statistic against the 0.95
    critical value for K-1 degrees of freedom; when it is exceeded, the
    sign of the Spearman correlation between bin index and count decides
    the direction: counts falling toward high-probability bins mean the
    model promised more fixations there than arrived (overconfident).
    """
    if len(fixations) == 0:
        raise NoFixations("calibration needs at least one fixation")
    counts = np.zeros(k, dtype=np.int64)
    expected = np.zeros(k)
    total = 0
    for image_id in fixations.image_ids():
        grid = densities.get(image_id)
        if grid is None:
            raise MissingDensity(image_id)
        pixels = fixations.pixels_for(image_id)
        log_p = grid.log_p[pixels[:, 0], pixels[:, 1]]
        if np.any(log_p == -np.inf):
            bad = int(np.argmax(log_p == -np.inf))
            raise ZeroDensityAtFixation(image_id, tuple(pixels[bad]))
        bins = quantile_partition(grid, k)
        counts += np.bincount(bins[pixels[:, 0], pixels[:, 1]], minlength=k)
        expected += len(pixels) * partition_masses(grid, bins, k)
        total += len(pixels)

    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (counts - expected) ** 2 / expected, 0.0)
    chi_square = float(terms.sum())
    critical = float(chi2.ppf(CHI_SQUARE_LEVEL, k - 1))
    if chi_square <= critical:
        verdict = "calibrated"
    else:
        rho = spearmanr(np.arange(k), counts).statistic
        if np.isnan(rho) or rho == 0.0:
            verdict = "calibrated"
        elif rho < 0:
            verdict = "overconfident"
        else:
            verdict = "underconfident"
    return CalibrationHistogram(
        bins=tuple(int(c) for c in counts),
        bin_masses=tuple(float(m) for m in expected / total),
        expected=tuple(float(e) for e in expected),
        expected_per_bin=total / k,
        n_fixations=total,
        chi_square=chi_square,
        critical_value=critical,
        verdict=verdict,
    )
