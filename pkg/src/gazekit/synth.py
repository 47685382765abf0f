"""Synthetic feature volumes with a known generating fixation density.

Channels are smooth random fields (Gaussian blobs plus oriented
gratings, lightly noised); the hidden density is the spatial softmax of
a blurred linear combination of the channels plus a weighted log
center bias, i.e. a point inside the readout head's model class, so
training experiments have a known optimum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blur import blur2d
from .errors import BadValue
from .grids import DensityGrid, FeatureVolume, Fixation, FixationSet, normalize


def gaussian_center_density(
    hw: tuple[int, int], sigma_frac: float = 0.35, eps: float = 1e-4
) -> DensityGrid:
    """Isotropic Gaussian centered on the grid, mixed with uniform mass."""
    h, w = hw
    rows = np.arange(h) + 0.5
    cols = np.arange(w) + 0.5
    sig_r = max(sigma_frac * h, 1e-6)
    sig_c = max(sigma_frac * w, 1e-6)
    bump = np.exp(-0.5 * ((rows - h / 2) / sig_r) ** 2)[:, None] * np.exp(
        -0.5 * ((cols - w / 2) / sig_c) ** 2
    )
    bump /= bump.sum()
    return normalize((1.0 - eps) * bump + eps / (h * w))


@dataclass(frozen=True)
class SynthSpec:
    channels: int = 8
    height: int = 64
    width: int = 64
    blobs_per_channel: int = 6
    grating_channels: int = 2
    noise: float = 0.02
    signal_gain: float = 2.0
    blur_sigma: float = 2.0
    cb_weight: float = 1.0
    cb_sigma_frac: float = 0.35
    cb_eps: float = 1e-4

    def __post_init__(self):
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise BadValue("synth spec needs positive dimensions")
        if self.blobs_per_channel < 1:
            raise BadValue("need at least one blob per channel")


@dataclass(frozen=True, eq=False)
class SynthResult:
    features: FeatureVolume
    true_density: DensityGrid
    centerbias: DensityGrid


def _random_fields(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    h, w, c = spec.height, spec.width, spec.channels
    rows = (np.arange(h) + 0.5)[:, None]
    cols = (np.arange(w) + 0.5)[None, :]
    side = min(h, w)
    fields = np.zeros((c, h, w))
    for ch in range(c):
        field = np.zeros((h, w))
        for _ in range(spec.blobs_per_channel):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            s = rng.uniform(0.08 * side, 0.3 * side)
            amp = rng.uniform(-1.0, 1.0)
            field += amp * np.exp(
                -0.5 * (((rows - cy) / s) ** 2 + ((cols - cx) / s) ** 2)
            )
        if ch < spec.grating_channels:
            freq = rng.uniform(1.0, 3.0) / side
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            field += 0.5 * np.sin(
                2 * np.pi * freq * (rows * np.cos(theta) + cols * np.sin(theta))
                + phase
            )
        field += spec.noise * rng.standard_normal((h, w))
        field = (field - field.mean()) / max(field.std(), 1e-12)
        fields[ch] = field
    return fields


def _density_from(
    spec: SynthSpec,
    fields: np.ndarray,
    weights: np.ndarray,
    centerbias: DensityGrid,
) -> DensityGrid:
    linear = np.tensordot(weights, fields, axes=1)
    logits = (
        spec.signal_gain * blur2d(linear, spec.blur_sigma)
        + spec.cb_weight * centerbias.log_p
    )
    m = logits.max()
    log_q = logits - (m + np.log(np.exp(logits - m).sum()))
    return DensityGrid(log_q)


def synth_features(spec: SynthSpec, seed: int) -> SynthResult:
    """Deterministic per seed; emits the generating density."""
    rng = np.random.default_rng(seed)
    fields = _random_fields(spec, rng)
    centerbias = gaussian_center_density((spec.height, spec.width), spec.cb_sigma_frac, spec.cb_eps)
    true_weights = rng.standard_normal(spec.channels) / np.sqrt(spec.channels)
    return SynthResult(
        FeatureVolume(fields),
        _density_from(spec, fields, true_weights, centerbias),
        centerbias,
    )


def synth_dataset(spec: SynthSpec, n_images: int, seed: int) -> list[SynthResult]:
    """Per-image feature volumes whose densities share one generator.

    The readout weights behind every image's density are drawn once, so
    a single trained model can be optimal for the whole dataset.
    """
    if n_images < 1:
        raise BadValue("need at least one image")
    rng = np.random.default_rng(seed)
    centerbias = gaussian_center_density((spec.height, spec.width), spec.cb_sigma_frac, spec.cb_eps)
    true_weights = rng.standard_normal(spec.channels) / np.sqrt(spec.channels)
    out = []
    for _ in range(n_images):
        fields = _random_fields(spec, rng)
        out.append(
            SynthResult(
                FeatureVolume(fields),
                _density_from(spec, fields, true_weights, centerbias),
                centerbias,
            )
        )
    return out


def sample_fixations(
    density: DensityGrid,
    n: int,
    seed: int | np.random.Generator,
    image_id: str = "img",
    subject_id: str = "s0",
) -> FixationSet:
    """Draw n fixations from a density; coordinates land on pixel centers."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = density.prob().ravel()
    p = p / p.sum()
    idx = rng.choice(len(p), size=n, p=p)
    h, w = density.shape
    records = [
        Fixation(image_id, subject_id, float(i % w) + 0.5, float(i // w) + 0.5)
        for i in idx
    ]
    return FixationSet(records)
