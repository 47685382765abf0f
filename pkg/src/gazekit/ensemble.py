"""Mixtures of predicted densities and disagreement analysis.

Mixtures are linear opinion pools: probability densities averaged with
nonnegative weights, computed stably in the log domain. Disagreement
between models on an image is the generalized Jensen-Shannon divergence
with equal weights, in bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import BadValue, BadWeights, MissingInstance, NotNormalized, ShapeMismatch
from .grids import DensityGrid, FixationSet, log_mixture, logsumexp2d
from .metrics import MetricReport, information_gain

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    """Named mixture members with normalized nonnegative weights."""

    members: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.members:
            raise BadWeights("mixture needs at least one member")
        weights = [w for _, w in self.members]
        _check_weights(weights)

    def names(self) -> list[str]:
        return [name for name, _ in self.members]

    def weights(self) -> list[float]:
        return [w for _, w in self.members]


def _check_weights(weights: Sequence[float]) -> None:
    if any(not (w >= 0 and math.isfinite(w)) for w in weights):
        raise BadWeights(f"weights must be nonnegative, got {list(weights)}")
    if abs(sum(weights) - 1.0) > WEIGHT_TOL:
        raise BadWeights(f"weights must sum to 1, got {sum(weights)!r}")


def mix(grids: Sequence[DensityGrid], weights: Sequence[float]) -> DensityGrid:
    """Weighted average of densities: p = sum_k w_k p_k, log domain.

    Zero-weight members are skipped, so weights (1, 0) return the first
    density bit for bit. The result is renormalized only if accumulated
    rounding (e.g. from file-tolerance inputs) exceeds 1e-9.
    """
    if len(grids) != len(weights) or not grids:
        raise BadWeights("need one weight per density")
    _check_weights(weights)
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ShapeMismatch(f"mixture members differ in shape: {g.shape} vs {shape}")
    log_p = log_mixture([g.log_p for g in grids], weights)
    try:
        return DensityGrid(log_p)
    except NotNormalized:
        return DensityGrid(log_p - logsumexp2d(log_p))


def weight_sweep(
    model_a: Mapping[str, DensityGrid],
    model_b: Mapping[str, DensityGrid],
    baseline: Mapping[str, DensityGrid],
    fixations: FixationSet,
    steps: int,
) -> list[tuple[float, float]]:
    """IG of the mixture (1-w) A + w B for w on a uniform grid of steps.

    Endpoints reuse the member densities unchanged, so they match the
    individual models' IG exactly.
    """
    if steps < 3:
        raise BadValue(f"weight sweep needs at least 3 steps, got {steps}")
    image_ids = sorted(model_a)
    curve = []
    for i in range(steps):
        w = i / (steps - 1)
        mixed = {
            img: mix([model_a[img], model_b[img]], [1.0 - w, w]) for img in image_ids
        }
        ig = information_gain(mixed, baseline, fixations)
        curve.append((w, ig.aggregate))
    return curve


def build_dsre(
    dataset,
    model_names: Sequence[str],
    instances_per_model: int,
) -> dict[str, DensityGrid]:
    """Equal-weight mixture over all instances of the named models.

    Instances follow the registry naming convention ``name#i`` with i
    counted from zero; every model must provide densities for instances
    0..k-1 on every fixated image.
    """
    if instances_per_model < 1:
        raise BadValue("need at least one instance per model")
    members = [
        f"{name}#{i}" for name in model_names for i in range(instances_per_model)
    ]
    image_ids = sorted(
        {img for (m, img) in dataset.densities if m == members[0]}
    )
    weights = [1.0 / len(members)] * len(members)
    out = {}
    for img in image_ids:
        grids = []
        for member in members:
            grid = dataset.densities.get((member, img))
            if grid is None:
                raise MissingInstance(f"no density for instance {member!r} on image {img!r}")
            grids.append(grid)
        out[img] = mix(grids, weights)
    return out


def entropy_bits(grid: DensityGrid) -> float:
    """Shannon entropy of the density in bits."""
    p = grid.prob()
    return float(-np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0).sum())


def js_divergence(grids: Sequence[DensityGrid]) -> float:
    """Equal-weight generalized Jensen-Shannon divergence, bits."""
    if len(grids) < 2:
        raise BadValue("JS divergence needs at least two densities")
    weights = [1.0 / len(grids)] * len(grids)
    mean_entropy = entropy_bits(mix(list(grids), weights))
    member_entropy = sum(entropy_bits(g) for g in grids) / len(grids)
    return mean_entropy - member_entropy


def disagreement_ranking(
    by_model: Mapping[str, Mapping[str, DensityGrid]],
) -> list[tuple[str, float]]:
    """Per-image JS divergence among the models, sorted descending.

    Ties break lexicographically by image id for determinism. Well-matched
    models typically disagree by a small fraction of a bit; values close
    to the log2(M) ceiling indicate near-disjoint predictions.
    """
    if len(by_model) < 2:
        raise BadValue("disagreement ranking needs at least two models")
    models = sorted(by_model)
    image_ids = sorted(by_model[models[0]])
    rows = []
    for img in image_ids:
        rows.append((img, js_divergence([by_model[m][img] for m in models])))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows
