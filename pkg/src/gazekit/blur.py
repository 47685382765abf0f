"""Separable Gaussian blur with reflective padding.

The kernel is truncated at 4 sigma and renormalized to sum to one, so
blurring a probability mass grid keeps total mass (up to padding
effects, which reflection routes back into the grid). The adjoint pass
and the derivative of the output with respect to sigma are provided for
backpropagation through a trainable blur width.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import BadValue


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized kernel taps at offsets -R..R with R = floor(4 sigma)."""
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise BadValue(f"blur sigma must be positive and finite, got {sigma}")
    radius = int(math.floor(4.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


def gaussian_taps_dsigma(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """(taps, d taps / d sigma) at fixed truncation radius."""
    taps = gaussian_taps(sigma)
    radius = (len(taps) - 1) // 2
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    k2 = k * k
    m2 = float(np.sum(taps * k2))
    dtaps = taps * (k2 - m2) / sigma**3
    return taps, dtaps


def _reflect_indices(n: int, pad: int) -> np.ndarray:
    """Source index for each padded position, reflect without edge repeat."""
    if n == 1:
        return np.zeros(n + 2 * pad, dtype=np.int64)
    q = np.arange(-pad, n + pad)
    period = 2 * n - 2
    q = np.abs(q) % period
    return np.where(q < n, q, period - q)


def _blur_axis(values: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(taps) - 1) // 2
    if radius == 0:
        return values * taps[0]
    x = np.moveaxis(values, axis, -1)
    n = x.shape[-1]
    xp = x[..., _reflect_indices(n, radius)]
    out = np.zeros_like(x)
    for k, w in enumerate(taps):
        out += w * xp[..., k : k + n]
    return np.moveaxis(out, -1, axis)


def _blur_axis_adjoint(grad: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(taps) - 1) // 2
    if radius == 0:
        return grad * taps[0]
    g = np.moveaxis(grad, axis, -1)
    n = g.shape[-1]
    gp = np.zeros(g.shape[:-1] + (n + 2 * radius,))
    for k, w in enumerate(taps):
        gp[..., k : k + n] += w * g
    out = np.zeros_like(g)
    np.add.at(out, (..., _reflect_indices(n, radius)), gp)
    return np.moveaxis(out, -1, axis)


def blur2d(values: np.ndarray, sigma: float) -> np.ndarray:
    """Blur rows then columns with the truncated Gaussian."""
    taps = gaussian_taps(sigma)
    return _blur_axis(_blur_axis(values, taps, 0), taps, 1)


def blur2d_adjoint(grad: np.ndarray, sigma: float) -> np.ndarray:
    """Adjoint of blur2d: maps output-gradients back to input-gradients."""
    taps = gaussian_taps(sigma)
    return _blur_axis_adjoint(_blur_axis_adjoint(grad, taps, 1), taps, 0)


def blur2d_dsigma(values: np.ndarray, sigma: float) -> np.ndarray:
    """d blur2d(values, sigma) / d sigma at fixed truncation radius."""
    taps, dtaps = gaussian_taps_dsigma(sigma)
    first = _blur_axis(values, taps, 0)
    dfirst = _blur_axis(values, dtaps, 0)
    return _blur_axis(dfirst, taps, 1) + _blur_axis(first, dtaps, 1)
