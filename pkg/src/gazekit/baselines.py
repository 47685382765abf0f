"""Center-bias baseline, per-image KDE gold standard, empirical maps.

All kernel density estimates use isotropic Gaussians evaluated at pixel
centers (row + 0.5, col + 0.5 in fixation coordinates), with each
kernel renormalized over the finite grid (no boundary reflection), then
averaged. Bandwidths come from a candidate grid by cross-validated
log-likelihood; a small uniform admixture keeps every pixel positive so
information gain stays finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .blur import blur2d
from .errors import BadValue, NoFixations, NonpositiveGold, TooFewFixations
from .grids import DensityGrid, FixationSet, normalize

DEFAULT_BANDWIDTH_GRID = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True)
class KdeSpec:
    """Bandwidth grid, fallback bandwidth, and uniform regularizer.

    ``bandwidth`` is used where cross-validated selection is impossible
    (a single training fixation) and as the default empirical-map blur.
    """

    bandwidth: float = 2.0
    bandwidth_grid: tuple[float, ...] = DEFAULT_BANDWIDTH_GRID
    regularizer_eps: float = 1e-4

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise BadValue(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.bandwidth_grid:
            raise BadValue("bandwidth grid must be nonempty")
        if list(self.bandwidth_grid) != sorted(self.bandwidth_grid):
            raise BadValue("bandwidth grid must be sorted ascending")
        if any(not (s > 0 and math.isfinite(s)) for s in self.bandwidth_grid):
            raise BadValue("bandwidth candidates must be positive")
        if not (0.0 <= self.regularizer_eps < 1.0):
            raise BadValue(f"regularizer eps must be in [0, 1), got {self.regularizer_eps}")


def _kernel_factors(points: np.ndarray, hw: tuple[int, int], sigma: float):
    """Per-point row/col Gaussian factors, normalized so each kernel has
    unit mass on the grid. Returns (rows (n, H), cols (n, W))."""
    h, w = hw
    ys = points[:, 1][:, None]
    xs = points[:, 0][:, None]
    row_centers = np.arange(h, dtype=np.float64) + 0.5
    col_centers = np.arange(w, dtype=np.float64) + 0.5
    rows = np.exp(-0.5 * ((row_centers[None, :] - ys) / sigma) ** 2)
    cols = np.exp(-0.5 * ((col_centers[None, :] - xs) / sigma) ** 2)
    # A kernel mass underflowing to zero would break normalization; nudge
    # the nearest pixel so every kernel keeps unit mass on the grid.
    for factors, centers, coords in ((rows, row_centers, ys), (cols, col_centers, xs)):
        dead = factors.sum(axis=1) == 0.0
        if np.any(dead):
            nearest = np.clip(np.floor(coords[dead, 0]).astype(int), 0, len(centers) - 1)
            factors[np.flatnonzero(dead), nearest] = 1.0
    rows /= rows.sum(axis=1, keepdims=True)
    cols /= cols.sum(axis=1, keepdims=True)
    return rows, cols


def _kde_grid(points: np.ndarray, hw: tuple[int, int], sigma: float) -> np.ndarray:
    rows, cols = _kernel_factors(points, hw, sigma)
    return rows.T @ cols / len(points)


def _values_at_own_pixels(rows, cols, pixels) -> np.ndarray:
    """For each point j: sum_i kernel_i(pixel_j), via the full KDE grid."""
    grid = rows.T @ cols
    return grid[pixels[:, 0], pixels[:, 1]]


def _pixels_of(points: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    h, w = hw
    rows = np.clip(np.floor(points[:, 1]).astype(np.int64), 0, h - 1)
    cols = np.clip(np.floor(points[:, 0]).astype(np.int64), 0, w - 1)
    return np.stack([rows, cols], axis=1)


def map_points(points: np.ndarray, src_hw: tuple[int, int], dst_hw: tuple[int, int]) -> np.ndarray:
    """Rescale continuous (x, y) coordinates between image shapes."""
    out = np.array(points, dtype=np.float64).reshape(-1, 2)
    out[:, 0] *= dst_hw[1] / src_hw[1]
    out[:, 1] *= dst_hw[0] / src_hw[0]
    return out


def _mix_uniform(kde: np.ndarray, eps: float) -> np.ndarray:
    return (1.0 - eps) * kde + eps / kde.size


@dataclass(frozen=True)
class CenterBias:
    density: DensityGrid
    bandwidth: float


def centerbias(
    fixations: FixationSet,
    images: Mapping[str, tuple[int, int]],
    target_hw: tuple[int, int],
    spec: KdeSpec,
    exclude_image: str | None = None,
) -> CenterBias:
    """Image-invariant KDE of all training fixations on the target shape.

    Fixations are rescaled to the target shape; the bandwidth maximizes
    leave-one-image-out log-likelihood of the training fixations (ties
    toward the smaller candidate). With a single training image the
    selection degrades to leave-one-fixation-out; with a single fixation
    the spec's fallback bandwidth is used.
    """
    image_ids = [i for i in fixations.image_ids() if i != exclude_image]
    points_list, groups = [], []
    for idx, image_id in enumerate(image_ids):
        pts = map_points(fixations.points_for(image_id), images[image_id], target_hw)
        points_list.append(pts)
        groups.append(np.full(len(pts), idx))
    if not points_list or sum(len(p) for p in points_list) == 0:
        raise NoFixations("center bias needs at least one training fixation")
    points = np.concatenate(points_list)
    groups = np.concatenate(groups)
    n = len(points)
    pixels = _pixels_of(points, target_hw)
    eps = spec.regularizer_eps
    uniform = 1.0 / (target_hw[0] * target_hw[1])

    if n == 1:
        # no held-out data to select on; a single candidate needs no
        # selection, otherwise fall back to the spec's fixed bandwidth
        chosen = (
            spec.bandwidth_grid[0]
            if len(spec.bandwidth_grid) == 1
            else spec.bandwidth
        )
    else:
        single_image = len(image_ids) == 1
        best_ll, chosen = -np.inf, spec.bandwidth_grid[0]
        for sigma in spec.bandwidth_grid:
            rows, cols = _kernel_factors(points, target_hw, sigma)
            totals = _values_at_own_pixels(rows, cols, pixels)
            if single_image:
                own = rows[np.arange(n), pixels[:, 0]] * cols[np.arange(n), pixels[:, 1]]
                held_out = (totals - own) / (n - 1)
            else:
                held_out = np.empty(n)
                for idx in range(len(image_ids)):
                    mask = groups == idx
                    n_in = int(mask.sum())
                    grid_in = rows[mask].T @ cols[mask]
                    within = grid_in[pixels[mask, 0], pixels[mask, 1]]
                    held_out[mask] = (totals[mask] - within) / (n - n_in)
            ll = float(np.log((1.0 - eps) * held_out + eps * uniform).sum())
            if ll > best_ll:
                best_ll, chosen = ll, sigma

    kde = _kde_grid(points, target_hw, chosen)
    return CenterBias(normalize(_mix_uniform(kde, eps)), chosen)


@dataclass(frozen=True)
class GoldStandard:
    """Pooled KDE of one image's fixations plus leave-one-out scores.

    ``loo_log2`` holds log2 density at each fixation's pixel with that
    fixation's own kernel removed, aligned with the input point order;
    use it when scoring the gold standard on its own build set.
    """

    density: DensityGrid
    bandwidth: float
    loo_log2: np.ndarray


def gold_standard(points: np.ndarray, hw: tuple[int, int], spec: KdeSpec) -> GoldStandard:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    if n < 2:
        raise TooFewFixations("gold standard needs at least two fixations")
    pixels = _pixels_of(points, hw)
    eps = spec.regularizer_eps
    uniform = 1.0 / (hw[0] * hw[1])

    best_ll, chosen, chosen_loo = -np.inf, spec.bandwidth_grid[0], None
    for sigma in spec.bandwidth_grid:
        rows, cols = _kernel_factors(points, hw, sigma)
        totals = _values_at_own_pixels(rows, cols, pixels)
        own = rows[np.arange(n), pixels[:, 0]] * cols[np.arange(n), pixels[:, 1]]
        held_out = (1.0 - eps) * (totals - own) / (n - 1) + eps * uniform
        ll = float(np.log(held_out).sum())
        if ll > best_ll:
            best_ll, chosen, chosen_loo = ll, sigma, held_out

    kde = _kde_grid(points, hw, chosen)
    return GoldStandard(
        normalize(_mix_uniform(kde, eps)), chosen, np.log2(chosen_loo)
    )


def empirical_map(pixels: np.ndarray, hw: tuple[int, int], sigma: float) -> DensityGrid:
    """Gaussian-blurred fixation histogram, renormalized."""
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise NoFixations("empirical map needs at least one fixation")
    hist = np.zeros(hw)
    np.add.at(hist, (pixels[:, 0], pixels[:, 1]), 1.0)
    return normalize(blur2d(hist, sigma))


def relative_score(ig_model: float, ig_gold: float) -> float:
    """Percentage of the gold standard's information gain."""
    if not ig_gold > 0:
        raise NonpositiveGold(f"gold-standard IG must be positive, got {ig_gold}")
    return 100.0 * ig_model / ig_gold
