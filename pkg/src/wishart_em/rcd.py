"""Region covariance descriptors of RGB images.

Images are float arrays of shape (H, W, 3) with intensities in [0, 1], the
row-major layout in which PPM and CSV files store them.  Masks are (H, W)
boolean arrays selecting the voxels that enter the descriptor.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import spd
from .errors import DegenerateFeatures, ImageFormatError, MaskTooSmall, NotPositiveDefinite, ZeroBlueVariance

JITTER = 1e-12
MIN_BLUE_STD = 1e-8


def _channel(c: int) -> Callable:
    def value(img, ys, xs):
        return img[ys, xs, c]

    return value


@dataclass
class FeatureMap:
    """Named per-voxel features; each callable maps ``(img, ys, xs)`` to n values."""

    names: Sequence[str] = ("R", "G", "B")
    functions: Sequence[Callable] = field(default_factory=lambda: [_channel(c) for c in range(3)])

    def __post_init__(self):
        if len(self.names) != len(self.functions) or not self.functions:
            raise ValueError("feature map needs one name per function and at least one feature")

    @property
    def dim(self) -> int:
        return len(self.functions)


def validate_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageFormatError(f"expected an H x W x 3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ImageFormatError("intensities must be finite and lie in [0, 1]")
    return img


def _mask_coords(img: np.ndarray, mask) -> tuple[np.ndarray, np.ndarray]:
    if mask is None:
        mask = np.ones(img.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ImageFormatError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    ys, xs = np.nonzero(mask)
    if ys.size < 2:
        raise MaskTooSmall(f"mask keeps {ys.size} voxels; need at least 2")
    return ys, xs


def extract_features(img, fmap: FeatureMap | None = None, mask=None) -> np.ndarray:
    """One row of feature values per retained voxel, in row-major voxel order."""
    img = validate_image(img)
    fmap = fmap or FeatureMap()
    ys, xs = _mask_coords(img, mask)
    return np.column_stack([np.asarray(f(img, ys, xs), dtype=float) for f in fmap.functions])


def region_covariance(features) -> np.ndarray:
    """Sample covariance (divisor n - 1) of the feature rows, made SPD.

    Raises
    ------
    DegenerateFeatures
        If some feature is constant or the matrix stays singular after a
        ``1e-12 I`` jitter.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[0] < 2:
        raise MaskTooSmall("need at least two feature rows")
    cov = spd.symmetrize(np.cov(f, rowvar=False, ddof=1).reshape(f.shape[1], f.shape[1]))
    if np.any(np.diag(cov) <= JITTER):
        raise DegenerateFeatures("a feature has zero variance over the region")
    if spd.is_spd(cov):
        return cov
    cov = cov + JITTER * np.eye(cov.shape[0])
    try:
        spd.cholesky(cov)
    except NotPositiveDefinite:
        raise DegenerateFeatures("covariance singular even after jitter") from None
    return cov


def blue_scale(img, mask=None) -> float:
    """Sample standard deviation (ddof=1) of the blue channel over the mask."""
    img = validate_image(img)
    ys, xs = _mask_coords(img, mask)
    return float(np.std(img[ys, xs, 2], ddof=1))


def rcd_pipeline(img, mask=None) -> np.ndarray:
    """3 x 3 descriptor of (R, G, B) / sigma_B over the masked voxels."""
    sigma = blue_scale(img, mask)
    if sigma <= MIN_BLUE_STD:
        raise ZeroBlueVariance(f"blue standard deviation {sigma:.3g} is too small")
    feats = extract_features(img, mask=mask) / sigma
    return region_covariance(feats)


# -- image files ---------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], start
    pattern = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")
    for _ in range(count):
        m = pattern.match(data, pos)
        if not m:
            raise ImageFormatError("truncated PPM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PPM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad PPM dimensions or maxval")
    n = w * h * 3
    if magic == b"P6":
        body = data[pos + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(body) < n * dtype.itemsize:
            raise ImageFormatError(f"{path}: truncated pixel data")
        vals = np.frombuffer(body, dtype=dtype, count=n).astype(float)
    elif magic == b"P3":
        try:
            vals = np.array(data[pos:].split()[:n], dtype=float)
        except ValueError:
            raise ImageFormatError(f"{path}: non-numeric pixel data") from None
        if vals.size < n:
            raise ImageFormatError(f"{path}: truncated pixel data")
    else:
        raise ImageFormatError(f"{path}: not a P3/P6 PPM file")
    if vals.max(initial=0) > maxval:
        raise ImageFormatError(f"{path}: sample exceeds maxval")
    return vals.reshape(h, w, 3) / maxval


def write_ppm(path: str | Path, img, maxval: int = 255, binary: bool = True) -> None:
    img = validate_image(img)
    h, w, _ = img.shape
    q = np.rint(img * maxval).astype(int)
    header = f"{'P6' if binary else 'P3'}\n{w} {h}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        Path(path).write_bytes(header + q.astype(dtype).tobytes())
    else:
        lines = [" ".join(str(v) for v in row.ravel()) for row in q]
        Path(path).write_bytes(header + ("\n".join(lines) + "\n").encode())


def read_image_csv(path: str | Path) -> np.ndarray:
    """H rows of 3W values, pixels interleaved as r,g,b."""
    with open(path, newline="") as fh:
        try:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        except ValueError:
            raise ImageFormatError(f"{path}: non-numeric entry") from None
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) % 3:
        raise ImageFormatError(f"{path}: rows must all hold 3W values")
    return validate_image(np.array(rows).reshape(len(rows), -1, 3))


def write_image_csv(path: str | Path, img) -> None:
    img = validate_image(img)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in img.reshape(img.shape[0], -1):
            writer.writerow([repr(float(v)) for v in row])


def read_mask_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[v.strip() for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1 or any(v not in ("0", "1") for r in rows for v in r):
        raise ImageFormatError(f"{path}: mask rows must hold equal counts of 0/1 values")
    return np.array(rows) == "1"


def read_image(path: str | Path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return validate_image(read_ppm(path))
    if suffix == ".csv":
        return read_image_csv(path)
    raise ImageFormatError(f"{path}: unsupported image type {suffix!r}")
