"""Dense and run-length mask representations plus the geometric kernels
(IoU, union, morphology, trimap, tight bbox) used by every other module.

Conventions, fixed once here so nothing downstream has to re-decide them:

* Masks are row-major (height, width) boolean grids.
* RLE is column-major with the first run counting zeros (a leading 0 run
  encodes a mask that starts with foreground) — the de-facto segmentation
  interchange convention, serialized as {"size": [h, w], "counts": [...]}.
* Boxes are half-open integer pixel boxes [xmin, xmax) x [ymin, ymax).
* Empty-vs-empty IoU is 1.0; empty-vs-nonempty is 0.0.
* Morphology uses a square (Chebyshev-ball) structuring element; pixels
  outside the image are background.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    EmptyMaskError,
    SumMismatchError,
)

# Trimap label values.
TRIMAP_BG = 0
TRIMAP_UNKNOWN = 1
TRIMAP_FG = 2


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean pixel grid."""

    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mask dimensions must be >= 1, got {self.width}x{self.height}")
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            if bits.size == self.width * self.height:
                bits = bits.reshape(self.height, self.width)
            else:
                raise ValueError(
                    f"bits size {bits.size} != {self.width}x{self.height}"
                )
        object.__setattr__(self, "bits", _readonly(bits))

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"expected 2-d array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr.astype(bool))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(width=width, height=height, bits=np.zeros((height, width), bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(width=width, height=height, bits=np.ones((height, width), bool))

    @property
    def area(self) -> int:
        """Number of foreground pixels."""
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def same_size(self, other: "BinaryMask") -> bool:
        return self.width == other.width and self.height == other.height

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.same_size(other) and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None  # mutable-ish payload; not hashable


@dataclass(frozen=True)
class RleMask:
    """Column-major run-length mask; first run counts zeros."""

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mask dimensions must be >= 1, got {self.width}x{self.height}")
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if any(r < 0 for r in runs):
            raise ValueError(f"negative run length in {runs!r}")
        if any(r == 0 for r in runs[1:]):
            raise ValueError("zero-length run allowed only in leading position")
        total = sum(runs)
        if total != self.width * self.height:
            raise SumMismatchError(
                f"runs sum to {total}, expected {self.width * self.height}"
            )

    @property
    def area(self) -> int:
        """Foreground pixel count, straight off the odd-indexed runs."""
        return sum(self.runs[1::2])

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"not an RLE object: {obj!r}") from exc
        return cls(width=int(w), height=int(h), runs=tuple(int(c) for c in counts))


@dataclass(frozen=True)
class BBox:
    """Half-open integer pixel box: [xmin, xmax) x [ymin, ymax)."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    def __post_init__(self):
        if not (0 <= self.xmin < self.xmax and 0 <= self.ymin < self.ymax):
            raise ValueError(
                f"invalid box [{self.xmin},{self.ymin},{self.xmax},{self.ymax}]"
            )

    @property
    def area(self) -> int:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def to_list(self) -> list[int]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    @classmethod
    def from_list(cls, coords) -> "BBox":
        x0, y0, x1, y1 = coords
        return cls(int(x0), int(y0), int(x1), int(y1))

    def clip(self, width: int, height: int) -> "BBox | None":
        """Intersect with the image rectangle; None when nothing remains."""
        x0 = max(0, self.xmin)
        y0 = max(0, self.ymin)
        x1 = min(width, self.xmax)
        y1 = min(height, self.ymax)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def to_mask(self, width: int, height: int) -> BinaryMask:
        """Rasterize the box interior on a width x height canvas."""
        bits = np.zeros((height, width), bool)
        clipped = self.clip(width, height)
        if clipped is not None:
            bits[clipped.ymin:clipped.ymax, clipped.xmin:clipped.xmax] = True
        return BinaryMask(width=width, height=height, bits=bits)


@dataclass(frozen=True, eq=False)
class Trimap:
    """Per-pixel {background, unknown, foreground} labels."""

    width: int
    height: int
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (self.height, self.width):
            raise ValueError(
                f"labels shape {labels.shape} != ({self.height}, {self.width})"
            )
        if not np.isin(labels, (TRIMAP_BG, TRIMAP_UNKNOWN, TRIMAP_FG)).all():
            raise ValueError("trimap labels must be in {0, 1, 2}")
        object.__setattr__(self, "labels", _readonly(labels))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trimap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.labels, other.labels))
        )

    __hash__ = None

    def foreground(self) -> BinaryMask:
        return BinaryMask(self.width, self.height, self.labels == TRIMAP_FG)

    def unknown(self) -> BinaryMask:
        return BinaryMask(self.width, self.height, self.labels == TRIMAP_UNKNOWN)

    def background(self) -> BinaryMask:
        return BinaryMask(self.width, self.height, self.labels == TRIMAP_BG)

    def to_rle3(self) -> dict:
        """3-level value/count RLE, column-major, for the wire."""
        flat = self.labels.flatten(order="F")
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [flat.size]))
        return {
            "size": [self.height, self.width],
            "values": [int(flat[s]) for s in starts],
            "counts": [int(e - s) for s, e in zip(starts, ends)],
        }

    @classmethod
    def from_rle3(cls, obj: dict) -> "Trimap":
        h, w = (int(v) for v in obj["size"])
        values = obj["values"]
        counts = obj["counts"]
        if len(values) != len(counts):
            raise ValueError("rle3 values/counts length mismatch")
        total = sum(counts)
        if total != w * h:
            raise SumMismatchError(f"rle3 counts sum to {total}, expected {w * h}")
        flat = np.repeat(np.asarray(values, np.int8), np.asarray(counts, np.int64))
        return cls(width=w, height=h, labels=flat.reshape((h, w), order="F"))


# -- run-length coding --------------------------------------------------------

def rle_encode(mask: BinaryMask) -> RleMask:
    """Encode a mask column-major; runs alternate starting with a zero run."""
    flat = mask.bits.flatten(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(boundaries).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleMask(width=mask.width, height=mask.height, runs=tuple(runs))


def rle_decode(rle: RleMask) -> BinaryMask:
    """Exact inverse of :func:`rle_encode` (validation lives in RleMask)."""
    values = np.arange(len(rle.runs), dtype=np.int64) % 2
    flat = np.repeat(values.astype(bool), np.asarray(rle.runs, np.int64))
    bits = flat.reshape((rle.height, rle.width), order="F")
    return BinaryMask(width=rle.width, height=rle.height, bits=bits)


def as_binary(mask: "BinaryMask | RleMask") -> BinaryMask:
    """Accept either representation; decode when needed."""
    if isinstance(mask, BinaryMask):
        return mask
    if isinstance(mask, RleMask):
        return rle_decode(mask)
    raise TypeError(f"expected BinaryMask or RleMask, got {type(mask).__name__}")


# -- geometric kernels --------------------------------------------------------

def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a n b| / |a u b|; 1.0 when both empty, 0.0 when exactly one is."""
    if not a.same_size(b):
        raise DimensionMismatchError(
            f"{a.width}x{a.height} vs {b.width}x{b.height}"
        )
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return inter / union


def box_iou(a: BBox, b: BBox) -> float:
    """Area IoU under the half-open convention."""
    ix = max(0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    iy = max(0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def union_masks(masks: list[BinaryMask]) -> BinaryMask:
    """Pixel-wise OR over a non-empty, same-sized list."""
    if not masks:
        raise EmptyInputError("union_masks needs at least one mask")
    first = masks[0]
    for m in masks[1:]:
        if not first.same_size(m):
            raise DimensionMismatchError(
                f"{first.width}x{first.height} vs {m.width}x{m.height}"
            )
    bits = np.logical_or.reduce([m.bits for m in masks])
    return BinaryMask(width=first.width, height=first.height, bits=bits)


def tight_bbox(mask: BinaryMask) -> BBox:
    """Minimal half-open box containing every foreground pixel."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("tight_bbox of an empty mask")
    return BBox(
        xmin=int(cols[0]),
        ymin=int(rows[0]),
        xmax=int(cols[-1]) + 1,
        ymax=int(rows[-1]) + 1,
    )


def erode(mask: BinaryMask, band: int) -> BinaryMask:
    """Erosion by a square of radius `band`; outside the image is background."""
    if band < 1:
        raise ValueError(f"band must be >= 1, got {band}")
    structure = np.ones((2 * band + 1, 2 * band + 1), bool)
    bits = ndimage.binary_erosion(mask.bits, structure=structure, border_value=0)
    return BinaryMask(width=mask.width, height=mask.height, bits=bits)


def dilate(mask: BinaryMask, band: int) -> BinaryMask:
    """Dilation by a square of radius `band`."""
    if band < 1:
        raise ValueError(f"band must be >= 1, got {band}")
    structure = np.ones((2 * band + 1, 2 * band + 1), bool)
    bits = ndimage.binary_dilation(mask.bits, structure=structure, border_value=0)
    return BinaryMask(width=mask.width, height=mask.height, bits=bits)


def trimap_from_mask(mask: BinaryMask, band: int) -> Trimap:
    """foreground = erosion(mask, band); background = complement of
    dilation(mask, band); unknown = everything else.

    A band larger than the object is legal and simply leaves the
    foreground empty.
    """
    fg = erode(mask, band).bits
    bg = ~dilate(mask, band).bits
    labels = np.full((mask.height, mask.width), TRIMAP_UNKNOWN, np.int8)
    labels[bg] = TRIMAP_BG
    labels[fg] = TRIMAP_FG
    return Trimap(width=mask.width, height=mask.height, labels=labels)


def default_trimap_band(width: int, height: int, base_band: int = 10, base_scale: int = 1024) -> int:
    """10 px at 1024-px image scale, scaled proportionally, never below 1."""
    return max(1, round(base_band * max(width, height) / base_scale))


def binarize_alpha(alpha: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Pixel set iff alpha >= threshold (inclusive)."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ValueError(f"expected 2-d alpha grid, got shape {alpha.shape}")
    return BinaryMask(width=alpha.shape[1], height=alpha.shape[0], bits=alpha >= threshold)
