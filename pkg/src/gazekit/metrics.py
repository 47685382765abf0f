"""Information gain and the classic saliency metric suite.

Log-likelihood style metrics are reported in bits per fixation and
aggregate over all fixations of the dataset; distribution comparisons
(CC, KLDiv, SIM) average per image. AUC variants use the exact
tie-aware Mann-Whitney statistic (ties count one half), so small-grid
results match brute-force enumeration bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .blur import blur2d
from .errors import (
    BadValue,
    EmptyNonfixPool,
    MissingDensity,
    NoFixations,
    ShapeMismatch,
    SingleImagePool,
    ZeroDensityAtFixation,
    ZeroVariance,
)
from .grids import LN2, DensityGrid, FixationSet, SaliencyMap

KLDIV_EPS = 1e-20
SAUC_POOL_CLAMP = 1e-20


class Metric(str, Enum):
    IG = "IG"
    LL = "LL"
    AUC = "AUC"
    SAUC = "sAUC"
    NSS = "NSS"
    CC = "CC"
    KLDIV = "KLDiv"
    SIM = "SIM"

    @property
    def units(self) -> str:
        return "bits/fixation" if self in (Metric.IG, Metric.LL) else "dimensionless"


# Metrics whose aggregate weights each image by its fixation count; the
# distribution comparisons below average per image instead.
FIXATION_WEIGHTED = frozenset({Metric.IG, Metric.LL, Metric.AUC, Metric.SAUC, Metric.NSS})
IMAGE_AVERAGED = frozenset({Metric.CC, Metric.KLDIV, Metric.SIM})


@dataclass(frozen=True)
class MetricReport:
    metric: Metric
    aggregate: float
    per_image: dict[str, float]
    n_fixations: int

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "aggregate": self.aggregate,
            "per_image": {k: self.per_image[k] for k in sorted(self.per_image)},
            "n_fixations": self.n_fixations,
        }


def _log2_sums(
    densities: Mapping[str, DensityGrid], fixations: FixationSet, model: str | None
) -> tuple[dict[str, tuple[int, float]], int]:
    """Per image: (n_fixations, sum of log2 density at fixated pixels)."""
    per_image: dict[str, tuple[int, float]] = {}
    total = 0
    for image_id in fixations.image_ids():
        grid = densities.get(image_id)
        if grid is None:
            raise MissingDensity(image_id, model)
        pixels = fixations.pixels_for(image_id)
        log_p = grid.log_p[pixels[:, 0], pixels[:, 1]]
        if np.any(log_p == -np.inf):
            bad = int(np.argmax(log_p == -np.inf))
            raise ZeroDensityAtFixation(image_id, tuple(pixels[bad]))
        per_image[image_id] = (len(pixels), float(log_p.sum()) / LN2)
        total += len(pixels)
    return per_image, total


def log_likelihood(
    densities: Mapping[str, DensityGrid],
    fixations: FixationSet,
    model: str | None = None,
) -> MetricReport:
    """Average log2 likelihood of the fixations, bits per fixation."""
    if len(fixations) == 0:
        raise NoFixations("log-likelihood needs at least one fixation")
    sums, total = _log2_sums(densities, fixations, model)
    per_image = {img: s / n for img, (n, s) in sums.items()}
    aggregate = sum(s for _, s in sums.values()) / total
    return MetricReport(Metric.LL, aggregate, per_image, total)


def information_gain(
    model: Mapping[str, DensityGrid],
    baseline: Mapping[str, DensityGrid],
    fixations: FixationSet,
) -> MetricReport:
    """Log-likelihood advantage of model over baseline, bits per fixation.

    Computed as LL(model) - LL(baseline) on identical code paths, so the
    identity holds exactly in floating point.
    """
    ll_model = log_likelihood(model, fixations, "model")
    ll_base = log_likelihood(baseline, fixations, "baseline")
    per_image = {
        img: ll_model.per_image[img] - ll_base.per_image[img]
        for img in ll_model.per_image
    }
    return MetricReport(
        Metric.IG,
        ll_model.aggregate - ll_base.aggregate,
        per_image,
        ll_model.n_fixations,
    )


@dataclass(frozen=True)
class IgDifference:
    """Per-image IG(A) - IG(B) against a shared baseline."""

    per_image: dict[str, float]
    mean: float
    std: float  # population std across images


def per_image_ig_difference(
    model_a: Mapping[str, DensityGrid],
    model_b: Mapping[str, DensityGrid],
    baseline: Mapping[str, DensityGrid],
    fixations: FixationSet,
) -> IgDifference:
    ig_a = information_gain(model_a, baseline, fixations)
    ig_b = information_gain(model_b, baseline, fixations)
    diffs = {img: ig_a.per_image[img] - ig_b.per_image[img] for img in ig_a.per_image}
    values = np.array(list(diffs.values()))
    return IgDifference(diffs, float(values.mean()), float(values.std()))


def _as_values(saliency) -> np.ndarray:
    if isinstance(saliency, SaliencyMap):
        return saliency.values
    if isinstance(saliency, DensityGrid):
        return saliency.prob()
    arr = np.asarray(saliency, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise BadValue("saliency values must be finite")
    return arr


def _mann_whitney_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    """Exact U / (n_pos * n_neg) with ties counted one half."""
    sorted_neg = np.sort(negatives)
    less = np.searchsorted(sorted_neg, positives, side="left")
    less_or_equal = np.searchsorted(sorted_neg, positives, side="right")
    u = less.sum() + 0.5 * (less_or_equal - less).sum()
    return float(u) / (len(positives) * len(negatives))


def auc(saliency, pixels: np.ndarray) -> float:
    """ROC area; positives are fixated pixels, negatives all pixels."""
    values = _as_values(saliency)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise NoFixations("AUC needs at least one fixation")
    positives = values[pixels[:, 0], pixels[:, 1]]
    return _mann_whitney_auc(positives, values.ravel())


def sauc(saliency, pixels: np.ndarray, pool_pixels: np.ndarray) -> float:
    """Shuffled AUC: negatives are nonfixation pool pixels on this image."""
    values = _as_values(saliency)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    pool = np.asarray(pool_pixels, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise NoFixations("sAUC needs at least one fixation")
    if len(pool) == 0:
        raise EmptyNonfixPool("sAUC needs a nonempty nonfixation pool")
    positives = values[pixels[:, 0], pixels[:, 1]]
    negatives = values[pool[:, 0], pool[:, 1]]
    return _mann_whitney_auc(positives, negatives)


def nss(saliency, pixels: np.ndarray) -> float:
    """Mean standardized saliency at fixated pixels (population std)."""
    values = _as_values(saliency)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise NoFixations("NSS needs at least one fixation")
    std = float(values.std())
    if std == 0.0:
        raise ZeroVariance("NSS is undefined for a constant map")
    return float((values[pixels[:, 0], pixels[:, 1]] - values.mean()).mean() / std)


def cc(prediction, empirical: DensityGrid) -> float:
    """Pearson correlation between prediction and empirical density."""
    p = _as_values(prediction).ravel()
    q = empirical.prob().ravel()
    if p.shape != q.shape:
        raise ShapeMismatch("CC inputs must share dimensions")
    dp, dq = p - p.mean(), q - q.mean()
    denom = math.sqrt(float(dp @ dp)) * math.sqrt(float(dq @ dq))
    if denom == 0.0:
        raise ZeroVariance("CC is undefined when either grid is constant")
    return float(dp @ dq) / denom


def _normalize_to_density(values: np.ndarray) -> np.ndarray:
    if np.any(values < 0):
        raise BadValue("prediction must be nonnegative to form a density")
    total = values.sum()
    if total <= 0:
        raise BadValue("prediction has no positive mass")
    return values / total


def kldiv(prediction, empirical: DensityGrid) -> float:
    """sum q * log2((q + eps) / (p + eps)), q empirical, p prediction."""
    p = _normalize_to_density(_as_values(prediction))
    q = empirical.prob()
    if p.shape != q.shape:
        raise ShapeMismatch("KLDiv inputs must share dimensions")
    ratio = np.log2((q + KLDIV_EPS) / (p + KLDIV_EPS))
    return float(np.where(q > 0, q * ratio, 0.0).sum())


def sim(prediction, empirical: DensityGrid) -> float:
    """Histogram intersection sum(min(p, q)) of the two densities."""
    p = _normalize_to_density(_as_values(prediction))
    q = empirical.prob()
    if p.shape != q.shape:
        raise ShapeMismatch("SIM inputs must share dimensions")
    return float(np.minimum(p, q).sum())


def map_pixels(pixels: np.ndarray, src_hw: tuple[int, int], dst_hw: tuple[int, int]) -> np.ndarray:
    """Map pixel indices between shapes by relative position.

    index' = round(index * (n_dst - 1) / (n_src - 1)); a degenerate
    one-pixel source axis maps to 0. Rounding is half-up.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    out = np.zeros_like(pixels)
    for axis in range(2):
        n_src, n_dst = src_hw[axis], dst_hw[axis]
        if n_src > 1:
            out[:, axis] = np.floor(pixels[:, axis] * (n_dst - 1) / (n_src - 1) + 0.5)
    return out.astype(np.int64)


def resample_nearest(values: np.ndarray, dst_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample on relative coordinates."""
    src_h, src_w = values.shape
    dst_h, dst_w = dst_hw
    rows = map_pixels(
        np.stack([np.arange(dst_h), np.zeros(dst_h)], axis=1), (dst_h, 1), (src_h, 1)
    )[:, 0]
    cols = map_pixels(
        np.stack([np.zeros(dst_w), np.arange(dst_w)], axis=1), (1, dst_w), (1, src_w)
    )[:, 1]
    return values[np.ix_(rows, cols)]


def optimal_saliency_maps(
    densities: Mapping[str, DensityGrid],
    metric: Metric,
    sigma_emp: float | None = None,
) -> dict[str, SaliencyMap]:
    """Saliency map per image with highest expected score under the metric.

    For NSS/AUC (and the likelihood metrics) the density itself is
    optimal. CC/SIM/KLDiv maps are the density convolved with the same
    Gaussian used for empirical maps. The sAUC map divides the density
    by the mean of the other images' densities, resampled nearest-
    neighbor and clamped away from zero.
    """
    image_ids = sorted(densities)
    out: dict[str, SaliencyMap] = {}
    if metric == Metric.SAUC:
        if len(image_ids) < 2:
            raise SingleImagePool("sAUC-optimal maps need at least two images")
        probs = {img: densities[img].prob() for img in image_ids}
        for img in image_ids:
            shape = probs[img].shape
            acc = np.zeros(shape)
            for other in image_ids:
                if other == img:
                    continue
                other_p = probs[other]
                acc += other_p if other_p.shape == shape else resample_nearest(other_p, shape)
            mean_others = np.maximum(acc / (len(image_ids) - 1), SAUC_POOL_CLAMP)
            out[img] = SaliencyMap(probs[img] / mean_others)
        return out
    for img in image_ids:
        p = densities[img].prob()
        if metric in (Metric.CC, Metric.SIM, Metric.KLDIV):
            if sigma_emp is None:
                raise BadValue(f"{metric.value}-optimal maps need sigma_emp")
            p = blur2d(p, sigma_emp)
        out[img] = SaliencyMap(p)
    return out
