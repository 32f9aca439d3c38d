"""Binary masks, COCO run-length encoding, polygon rasterization and IoU.

The hot loops live in a compiled extension (``_ckernels``) with a numpy
fallback (``_pykernels``). The compiled kernels are used when importable;
set ``ZSIKIT_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _pykernels

if os.environ.get("ZSIKIT_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND: str = kernels.BACKEND

__all__ = [
    "BACKEND",
    "BinaryMask",
    "BoundingBox",
    "MaskError",
    "Polygon",
    "RleMask",
    "available_backends",
    "box_iou",
    "box_iou_matrix",
    "mask_iou",
    "mask_iou_matrix",
    "rasterize",
    "rle_decode",
    "rle_encode",
    "rle_from_string",
    "rle_to_string",
]


class MaskError(ValueError):
    """Invalid mask, polygon, or run-length data."""


def available_backends() -> dict:
    """Map backend name to kernel module for every backend importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise MaskError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise MaskError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def clip(self, width: float, height: float) -> "BoundingBox":
        """Clip to ``[0, width] x [0, height]``; raises if nothing remains."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x + self.w, 0.0), width)
        y2 = min(max(self.y + self.h, 0.0), height)
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major binary grid, stored as a read-only ``(height, width)`` uint8 array."""

    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.size != self.width * self.height:
            raise MaskError(
                f"mask has {bits.size} bits, expected {self.width}x{self.height}"
            )
        bits = bits.reshape(self.height, self.width)
        object.__setattr__(self, "bits", _readonly((bits != 0).astype(np.uint8)))

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise MaskError("mask array must be 2-D (height, width)")
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((height, width), dtype=np.uint8))

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RleMask:
    """Column-major run lengths, alternating 0-runs and 1-runs, starting with a 0-run."""

    width: int
    height: int
    runs: np.ndarray = field(repr=False)

    def __post_init__(self):
        runs = np.asarray(self.runs)
        if runs.ndim != 1:
            raise MaskError("runs must be one-dimensional")
        if runs.size and (runs.min() < 0 or runs.max() > 0xFFFFFFFF):
            raise MaskError("run lengths must be non-negative 32-bit integers")
        runs = runs.astype(np.uint32)
        total = int(runs.sum(dtype=np.uint64))
        if total != self.width * self.height:
            raise MaskError(
                f"run lengths sum to {total}, expected {self.width * self.height}"
            )
        object.__setattr__(self, "runs", _readonly(runs))

    @property
    def area(self) -> int:
        return kernels.rle_area(self.runs)

    @property
    def size(self) -> list[int]:
        """COCO ``size`` field: ``[height, width]``."""
        return [self.height, self.width]

    def to_coco(self) -> dict:
        return {"size": self.size, "counts": rle_to_string(self).decode("ascii")}

    @classmethod
    def from_coco(cls, obj: dict) -> "RleMask":
        """Parse a COCO RLE dict, compressed (string counts) or uncompressed (list)."""
        try:
            h, w = (int(v) for v in obj["size"])
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskError(f"malformed RLE object: {exc}") from None
        if isinstance(counts, (str, bytes)):
            return rle_from_string(counts, w, h)
        return cls(w, h, np.asarray(counts, dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, RleMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.runs, other.runs)
        )

    __hash__ = None


@dataclass(frozen=True)
class Polygon:
    """Closed polygon as a flat ``x1, y1, ..., xn, yn`` tuple."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(v) for v in self.points)
        if len(pts) < 6 or len(pts) % 2:
            raise MaskError(f"polygon needs an even number >= 6 of coordinates, got {len(pts)}")
        object.__setattr__(self, "points", pts)


def rle_encode(m: BinaryMask) -> RleMask:
    flat = np.asfortranarray(m.bits).ravel(order="F")
    return RleMask(m.width, m.height, kernels.rle_encode(flat))


def rle_decode(r: RleMask) -> BinaryMask:
    n = r.width * r.height
    try:
        flat = kernels.rle_decode(r.runs, n)
    except ValueError as exc:
        raise MaskError(str(exc)) from None
    return BinaryMask(r.width, r.height, flat.reshape((r.height, r.width), order="F"))


def rle_to_string(r: RleMask) -> bytes:
    """COCO compressed-RLE ``counts`` string."""
    return kernels.rle_to_string(r.runs)


def rle_from_string(s: str | bytes, width: int, height: int) -> RleMask:
    try:
        runs = kernels.rle_from_string(s)
    except ValueError as exc:
        raise MaskError(str(exc)) from None
    return RleMask(width, height, runs)


def rasterize(polygons: Iterable[Polygon] | Polygon, width: int, height: int) -> BinaryMask:
    """Union of even-odd fills; a pixel is set iff its center lies inside a polygon."""
    if width <= 0 or height <= 0:
        raise MaskError(f"raster size must be positive, got {width}x{height}")
    if isinstance(polygons, Polygon):
        polygons = [polygons]
    out = np.zeros((height, width), dtype=np.uint8)
    for poly in polygons:
        if not isinstance(poly, Polygon):
            poly = Polygon(tuple(poly))
        out |= kernels.rasterize(np.asarray(poly.points, dtype=np.float64), height, width)
    return BinaryMask(width, height, out)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    return float(kernels.box_iou([a.as_xywh()], [b.as_xywh()])[0, 0])


def box_iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    xa = np.array([bb.as_xywh() for bb in a], dtype=np.float64).reshape(-1, 4)
    xb = np.array([bb.as_xywh() for bb in b], dtype=np.float64).reshape(-1, 4)
    return kernels.box_iou(xa, xb)


def _as_rle(m) -> RleMask:
    if isinstance(m, RleMask):
        return m
    if isinstance(m, BinaryMask):
        return rle_encode(m)
    raise TypeError(f"expected BinaryMask or RleMask, got {type(m).__name__}")


def mask_iou(a: BinaryMask | RleMask, b: BinaryMask | RleMask) -> float:
    """Intersection over union of two same-sized masks; two empty masks give 0."""
    return float(mask_iou_matrix([a], [b])[0, 0])


def mask_iou_matrix(a: Sequence, b: Sequence) -> np.ndarray:
    ra = [_as_rle(m) for m in a]
    rb = [_as_rle(m) for m in b]
    shapes = {(m.width, m.height) for m in ra + rb}
    if len(shapes) > 1:
        raise MaskError(f"mask dimension mismatch: {sorted(shapes)}")
    if not ra or not rb:
        return np.zeros((len(ra), len(rb)))
    w, h = shapes.pop()
    return kernels.rle_iou([m.runs for m in ra], [m.runs for m in rb], w * h)
