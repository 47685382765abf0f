"""Core data model: density grids, saliency maps, fixations, datasets.

Densities are kept in natural-log space throughout so that strongly
peaked distributions keep precision; conversion to bits happens at the
metric boundary (divide by ln 2). All containers are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AllZero,
    BadValue,
    MissingDensity,
    NotNormalized,
    OutOfBounds,
    ShapeMismatch,
)

LN2 = math.log(2.0)


def _frozen(values, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=dtype)
    out.setflags(write=False)
    return out


def logsumexp2d(log_values: np.ndarray) -> float:
    """log(sum(exp(x))) over the whole array, tolerating -inf entries."""
    m = np.max(log_values)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(log_values - m))))


def log_mixture(log_ps: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Pointwise log(sum_k w_k * exp(log_p_k)) for nonnegative weights.

    Members with weight zero are skipped entirely, so a (1, 0, ...)
    weighting returns the first array bit-for-bit.
    """
    live = [(w, lp) for w, lp in zip(weights, log_ps) if w > 0.0]
    if len(live) == 1 and live[0][0] == 1.0:
        return live[0][1]
    terms = np.stack([math.log(w) + lp for w, lp in live])
    m = np.max(terms, axis=0)
    finite = m > -np.inf
    out = np.full(m.shape, -np.inf)
    if np.any(finite):
        shifted = np.exp(terms[:, finite] - m[finite])
        out[finite] = m[finite] + np.log(shifted.sum(axis=0))
    return out


class DensityGrid:
    """A 2D discrete probability distribution, stored as natural logs.

    Entries are finite or -inf; exp(log_p) sums to one within the
    construction tolerance (1e-9 for anything produced by this library,
    1e-6 for grids accepted from files).
    """

    __slots__ = ("log_p",)

    def __init__(self, log_p, *, tol: float | None = 1e-9):
        arr = _frozen(log_p)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"density grid must be 2D, got shape {arr.shape}")
        if np.any(np.isnan(arr)) or np.any(arr == np.inf):
            raise BadValue("log density entries must be finite or -inf")
        lse = logsumexp2d(arr)
        if lse == -np.inf:
            raise BadValue("density has no positive mass")
        if tol is not None and abs(lse) > tol:
            raise NotNormalized(f"density sums to exp({lse:.3e}), not 1")
        object.__setattr__(self, "log_p", arr)

    def __setattr__(self, *a):  # immutable
        raise AttributeError("DensityGrid is immutable")

    @property
    def height(self) -> int:
        return self.log_p.shape[0]

    @property
    def width(self) -> int:
        return self.log_p.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_p.shape

    def prob(self) -> np.ndarray:
        """Probability masses as a fresh linear-domain array."""
        return np.exp(self.log_p)

    def __repr__(self):
        return f"DensityGrid({self.height}x{self.width})"


def normalize(values) -> DensityGrid:
    """Turn a nonnegative grid into a DensityGrid: log(v) - log(sum v)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2D grid, got shape {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise BadValue("density input must be finite and nonnegative")
    total = arr.sum()
    if total <= 0.0:
        raise AllZero("cannot normalize an all-zero grid")
    with np.errstate(divide="ignore"):
        log_p = np.log(arr) - np.log(total)
    return DensityGrid(log_p)


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Unnormalized per-pixel scores; only ordering / affine class matters."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 2:
            raise ShapeMismatch(f"saliency map must be 2D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise BadValue("saliency values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """C x H x W feature stack consumed by the readout trainer."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ShapeMismatch(f"feature volume must be CxHxW, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise BadValue("feature values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Fixation:
    """One gaze landing: continuous pixel coordinates on an image."""

    image_id: str
    subject_id: str
    x: float
    y: float

    @property
    def pixel(self) -> tuple[int, int]:
        """(row, col) pixel index, by floor of the coordinates."""
        return (int(math.floor(self.y)), int(math.floor(self.x)))


class FixationSet:
    """Immutable collection of fixations with per-image grouping."""

    __slots__ = ("records", "_by_image")

    def __init__(self, records: Iterable[Fixation]):
        object.__setattr__(self, "records", tuple(records))
        by_image: dict[str, list[Fixation]] = {}
        for rec in self.records:
            by_image.setdefault(rec.image_id, []).append(rec)
        object.__setattr__(
            self, "_by_image", {k: tuple(v) for k, v in by_image.items()}
        )

    def __setattr__(self, *a):
        raise AttributeError("FixationSet is immutable")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def image_ids(self) -> list[str]:
        """Sorted ids of images that have at least one fixation."""
        return sorted(self._by_image)

    def for_image(self, image_id: str) -> tuple[Fixation, ...]:
        return self._by_image.get(image_id, ())

    def pixels_for(self, image_id: str) -> np.ndarray:
        """(n, 2) int array of (row, col) pixel indices for one image."""
        recs = self.for_image(image_id)
        if not recs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([r.pixel for r in recs], dtype=np.int64)

    def points_for(self, image_id: str) -> np.ndarray:
        """(n, 2) float array of continuous (x, y) coordinates."""
        recs = self.for_image(image_id)
        if not recs:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([(r.x, r.y) for r in recs], dtype=np.float64)


class Dataset:
    """Image dimension registry, fixations, and named model densities.

    Densities are keyed by (model_name, image_id). Construction checks
    that every fixation lands inside its registered image and every
    density matches the registered dimensions.
    """

    __slots__ = ("images", "fixations", "densities")

    def __init__(
        self,
        images: Mapping[str, tuple[int, int]],
        fixations: FixationSet | None = None,
        densities: Mapping[tuple[str, str], DensityGrid] | None = None,
    ):
        object.__setattr__(self, "images", dict(images))
        object.__setattr__(self, "fixations", fixations or FixationSet(()))
        object.__setattr__(self, "densities", dict(densities or {}))
        for rec in self.fixations:
            if rec.image_id not in self.images:
                raise OutOfBounds(
                    f"fixation references unregistered image {rec.image_id!r}"
                )
            h, w = self.images[rec.image_id]
            if not (0 <= rec.x < w and 0 <= rec.y < h):
                raise OutOfBounds(
                    f"fixation ({rec.image_id}, {rec.subject_id}, "
                    f"x={rec.x}, y={rec.y}) outside {h}x{w} image"
                )
        for (model, image_id), grid in self.densities.items():
            if image_id not in self.images:
                raise OutOfBounds(
                    f"density for unregistered image {image_id!r} (model {model!r})"
                )
            if grid.shape != tuple(self.images[image_id]):
                raise ShapeMismatch(
                    f"density {model!r}/{image_id!r} is {grid.shape}, "
                    f"image registered as {tuple(self.images[image_id])}"
                )

    def __setattr__(self, *a):
        raise AttributeError("Dataset is immutable")

    def model_names(self) -> list[str]:
        return sorted({m for m, _ in self.densities})

    def density(self, model: str, image_id: str) -> DensityGrid:
        try:
            return self.densities[(model, image_id)]
        except KeyError:
            raise MissingDensity(image_id, model) from None

    def model_densities(self, model: str) -> dict[str, DensityGrid]:
        """image_id -> DensityGrid for one model, sorted by image id."""
        out = {
            img: g for (m, img), g in self.densities.items() if m == model
        }
        return {img: out[img] for img in sorted(out)}

    def with_model(
        self, model: str, densities: Mapping[str, DensityGrid]
    ) -> "Dataset":
        """New dataset with an extra named model attached."""
        merged = dict(self.densities)
        for img, grid in densities.items():
            merged[(model, img)] = grid
        return Dataset(self.images, self.fixations, merged)
