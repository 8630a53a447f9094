"""Linear-intensity image buffers, metrics and the raw float file format.

Images are numpy arrays in planar layout ``(C, H, W)`` with ``C`` in {1, 3}.
Values are linear intensities; render outputs may exceed 1.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RLK1"
HEADER = struct.Struct("<4sIII")
PSNR_CAP = 99.0
PEAK = 1.0


class ShapeError(ValueError):
    """Raised when image operands do not have matching shapes."""


class SchemaError(ValueError):
    """Raised when a file does not follow the expected on-disk schema."""


def as_image(a) -> np.ndarray:
    """Return ``a`` as a float ``(C, H, W)`` array, promoting 2-D input to one channel."""
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def check_finite(a: np.ndarray, what: str = "image") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    return a


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _same_shape(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(m: float) -> float:
    if m < 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(PEAK**2 / m))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0, capped at 99 dB for (near) identical images."""
    return psnr_from_mse(mse(a, b))


def subtract_clamped(a, b) -> np.ndarray:
    """Isolate the flash contribution: ``max(a - b, 0)`` in the linear domain."""
    a, b = _same_shape(a, b)
    return np.maximum(a - b, 0.0)


def srgb_encode(x):
    """Standard sRGB opto-electronic transfer on values already clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_decode(s):
    s = np.asarray(s, dtype=np.float64)
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


def display_encode(a) -> np.ndarray:
    """Clamp, apply the sRGB transfer and quantize to 8-bit codes."""
    a = check_finite(np.asarray(a, dtype=np.float64))
    s = srgb_encode(np.clip(a, 0.0, 1.0))
    return np.rint(s * 255.0).astype(np.uint8)


def display_decode(codes) -> np.ndarray:
    return srgb_decode(np.asarray(codes, dtype=np.float64) / 255.0)


def write_raw(path, image) -> None:
    """Write ``image`` as little-endian float32 behind the 16-byte RLK1 header."""
    img = as_image(image)
    check_finite(img, str(path))
    c, h, w = img.shape
    data = np.ascontiguousarray(img, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, w, h, c))
        fh.write(data.tobytes())


def read_raw(path) -> np.ndarray:
    """Read an RLK1 file back as a float32 ``(C, H, W)`` array."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise SchemaError(f"{path}: truncated header")
    magic, w, h, c = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    n = w * h * c
    if len(blob) != HEADER.size + 4 * n:
        raise SchemaError(f"{path}: expected {n} floats, file has {(len(blob) - HEADER.size) / 4:g}")
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER.size)
    return data.reshape(c, h, w).astype(np.float32)


def write_preview(path, image) -> None:
    """Write an 8-bit sRGB PNG for inspection. Never read back by the pipeline."""
    from PIL import Image

    img = as_image(image)
    codes = display_encode(img)
    if codes.shape[0] == 1:
        Image.fromarray(codes[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(codes[:3], 0, -1), mode="RGB").save(path)


@dataclass
class MetricRow:
    index: int
    direction: tuple
    mse: float
    psnr: float


@dataclass
class MetricReport:
    """Per-direction MSE/PSNR rows plus their means."""

    rows: list[MetricRow] = field(default_factory=list)

    def add(self, index, direction, m, p=None):
        """Append a row; ``p`` defaults to the PSNR of ``m`` (pass it to record a mean PSNR)."""
        p = psnr_from_mse(m) if p is None else p
        self.rows.append(MetricRow(int(index), tuple(float(x) for x in direction), float(m), float(p)))

    @property
    def mean_mse(self) -> float:
        return float(np.mean([r.mse for r in self.rows])) if self.rows else 0.0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows])) if self.rows else 0.0

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"index": r.index, "direction": list(r.direction), "mse": r.mse, "psnr": r.psnr}
                for r in self.rows
            ],
            "mean_mse": self.mean_mse,
            "mean_psnr": self.mean_psnr,
        }
