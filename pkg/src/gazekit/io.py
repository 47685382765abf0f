"""Bit-exact file formats: FDF1 densities, FFV1 features, fixation CSV.

FDF1: magic ``FDF1`` | u32 LE height | u32 LE width | u8 domain flag
(0 = linear probabilities, 1 = natural log) | h*w float64 LE, row-major.
Files written here always carry the log flag, so read(write(grid)) is
value-identical and write(read(bytes)) is byte-identical for log files.

FFV1: magic ``FFV1`` | u32 LE channels | u32 LE height | u32 LE width |
C*H*W float32 LE in (c, h, w) order.
"""
from __future__ import annotations

import csv
import io as _io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import (
    BadDimensions,
    BadMagic,
    BadValue,
    NotNormalized,
    ParseError,
)
from .grids import DensityGrid, FeatureVolume, Fixation, FixationSet, logsumexp2d

DENSITY_MAGIC = b"FDF1"
FEATURE_MAGIC = b"FFV1"
DOMAIN_LINEAR = 0
DOMAIN_LOG = 1

_MAX_PIXELS = 2**32  # guards against u32 h*w overflowing an allocation


def write_density(grid: DensityGrid) -> bytes:
    """Serialize a density grid (always in the log domain)."""
    head = DENSITY_MAGIC + struct.pack("<IIB", grid.height, grid.width, DOMAIN_LOG)
    return head + grid.log_p.astype("<f8").tobytes()


def read_density(data: bytes) -> DensityGrid:
    """Parse FDF1 bytes; linear-flag payloads are converted to logs."""
    if len(data) < 13 or data[:4] != DENSITY_MAGIC:
        raise BadMagic("not an FDF1 density file")
    height, width, flag = struct.unpack("<IIB", data[4:13])
    if height == 0 or width == 0 or height * width > _MAX_PIXELS:
        raise BadDimensions(f"bad density dimensions {height}x{width}")
    if flag not in (DOMAIN_LINEAR, DOMAIN_LOG):
        raise BadMagic(f"unknown domain flag {flag}")
    expected = 13 + 8 * height * width
    if len(data) != expected:
        raise BadDimensions(
            f"payload is {len(data) - 13} bytes, header promises {expected - 13}"
        )
    values = np.frombuffer(data[13:], dtype="<f8").reshape(height, width)
    if flag == DOMAIN_LINEAR:
        if np.any(np.isnan(values)) or np.any(values == np.inf) or np.any(values < 0):
            raise BadValue("linear density entries must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            log_p = np.log(values)
    else:
        if np.any(np.isnan(values)) or np.any(values == np.inf):
            raise BadValue("log density entries must be finite or -inf")
        log_p = np.array(values)
    lse = logsumexp2d(log_p)
    if not abs(lse) <= 1e-6:  # also catches -inf (all-zero payload)
        raise NotNormalized(f"density sums to exp({lse:.6e}), not 1")
    return DensityGrid(log_p, tol=None)


def write_features(volume: FeatureVolume) -> bytes:
    c, h, w = volume.shape
    head = FEATURE_MAGIC + struct.pack("<III", c, h, w)
    return head + volume.values.astype("<f4").tobytes()


def read_features(data: bytes) -> FeatureVolume:
    if len(data) < 16 or data[:4] != FEATURE_MAGIC:
        raise BadMagic("not an FFV1 feature file")
    c, h, w = struct.unpack("<III", data[4:16])
    if c == 0 or h == 0 or w == 0 or c * h * w > _MAX_PIXELS:
        raise BadDimensions(f"bad feature dimensions {c}x{h}x{w}")
    expected = 16 + 4 * c * h * w
    if len(data) != expected:
        raise BadDimensions(
            f"payload is {len(data) - 16} bytes, header promises {expected - 16}"
        )
    values = np.frombuffer(data[16:], dtype="<f4").astype(np.float64)
    return FeatureVolume(values.reshape(c, h, w))


FIXATION_HEADER = ["image_id", "subject_id", "x", "y"]


def read_fixations(text: str) -> FixationSet:
    """Parse the fixation CSV (header image_id,subject_id,x,y).

    Bounds are not checked here; they are validated against the image
    registry when the set is attached to a Dataset.
    """
    reader = csv.reader(_io.StringIO(text, newline=""))
    records = []
    header = None
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if header is None:
            header = [col.strip() for col in row]
            if header != FIXATION_HEADER:
                raise ParseError(
                    lineno, f"expected header {','.join(FIXATION_HEADER)}"
                )
            continue
        if len(row) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(row)}")
        image_id, subject_id, xs, ys = (col.strip() for col in row)
        try:
            x, y = float(xs), float(ys)
        except ValueError:
            raise ParseError(lineno, f"bad coordinates {xs!r},{ys!r}") from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ParseError(lineno, "coordinates must be finite")
        records.append(Fixation(image_id, subject_id, x, y))
    if header is None:
        raise ParseError(1, "empty file, header required")
    return FixationSet(records)


def write_fixations(fixations: FixationSet) -> str:
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FIXATION_HEADER)
    for rec in fixations:
        writer.writerow([rec.image_id, rec.subject_id, repr(rec.x), repr(rec.y)])
    return out.getvalue()


def read_image_registry(text: str) -> dict[str, tuple[int, int]]:
    """Parse an image-dimension CSV with header image_id,height,width."""
    reader = csv.reader(_io.StringIO(text, newline=""))
    images: dict[str, tuple[int, int]] = {}
    header = None
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if header is None:
            header = [col.strip() for col in row]
            if header != ["image_id", "height", "width"]:
                raise ParseError(lineno, "expected header image_id,height,width")
            continue
        if len(row) != 3:
            raise ParseError(lineno, f"expected 3 fields, got {len(row)}")
        image_id, hs, ws = (col.strip() for col in row)
        try:
            h, w = int(hs), int(ws)
        except ValueError:
            raise ParseError(lineno, f"bad dimensions {hs!r},{ws!r}") from None
        if h < 1 or w < 1:
            raise ParseError(lineno, "dimensions must be positive")
        images[image_id] = (h, w)
    if header is None:
        raise ParseError(1, "empty file, header required")
    return images


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))
