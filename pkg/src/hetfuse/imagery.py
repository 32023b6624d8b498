"""Raster data model, normalization, channel assembly and BIRF file I/O.

Images are stored band-sequential as ``float32`` arrays of shape
``(bands, height, width)``. The same layout is used by the networks
(``N, C, H, W`` batches), so stacking observations is a plain
concatenation along the first axis.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hetfuse.errors import BandMismatch, FormatError, SizeMismatch

MAGIC = b"BIRF"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIB")


class Kind(enum.IntEnum):
    MS = 0
    SAR = 1
    MASK = 2


class ValueRange(enum.Enum):
    RAW = "raw"
    UNIT_SIGNED = "unit_signed"


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Immutable H x W x C image with band semantics.

    ``data`` becomes a read-only ``float32`` array of shape
    ``(bands, height, width)``; writeable inputs are copied, read-only
    ones (e.g. crops of another raster) are shared.
    """

    data: np.ndarray
    kind: Kind = Kind.MS
    value_range: ValueRange = ValueRange.RAW

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.flags.writeable:
            arr = arr.copy()
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise SizeMismatch(f"expected (bands, height, width) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster contains non-finite values")
        kind = Kind(self.kind)
        if kind is Kind.MASK:
            if arr.shape[0] != 1:
                raise BandMismatch("mask rasters have exactly one band")
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError("mask values must be 0 or 1")
        if self.value_range is ValueRange.UNIT_SIGNED and arr.size and (arr.min() < -1 or arr.max() > 1):
            raise ValueError("UNIT_SIGNED raster has values outside [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "kind", kind)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def replace(self, data: np.ndarray, **kw) -> RasterImage:
        """Return a new image with ``data`` and the same metadata unless overridden."""
        kw.setdefault("kind", self.kind)
        kw.setdefault("value_range", self.value_range)
        return RasterImage(data, **kw)

    def crop(self, top: int, left: int, height: int, width: int) -> RasterImage:
        return self.replace(self.data[:, top:top + height, left:left + width])

    def __repr__(self):
        return (f"RasterImage({self.height}x{self.width}x{self.bands}, "
                f"kind={self.kind.name}, range={self.value_range.name})")


@dataclass(frozen=True)
class NormStats:
    offset: tuple[float, ...]
    scale: tuple[float, ...]

    def __post_init__(self):
        offset = tuple(float(v) for v in np.atleast_1d(self.offset))
        scale = tuple(float(v) for v in np.atleast_1d(self.scale))
        if len(scale) != len(offset):
            raise BandMismatch("offset and scale must have one entry per band")
        if any(not s > 0 for s in scale):
            raise ValueError("scale must be positive in every band")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)

    @property
    def bands(self) -> int:
        return len(self.offset)

    @classmethod
    def uniform(cls, offset: float, scale: float, bands: int) -> NormStats:
        return cls((offset,) * bands, (scale,) * bands)

    @classmethod
    def from_range(cls, img: RasterImage) -> NormStats:
        """Midpoint / half-range per band, mapping the image's extremes to -1 and +1."""
        lo = img.data.reshape(img.bands, -1).min(axis=1).astype(np.float64)
        hi = img.data.reshape(img.bands, -1).max(axis=1).astype(np.float64)
        half = np.where(hi > lo, (hi - lo) / 2, 1.0)
        return cls(tuple((hi + lo) / 2), tuple(half))

    def _columns(self, bands: int):
        if bands != self.bands:
            raise BandMismatch(f"stats have {self.bands} bands, image has {bands}")
        off = np.asarray(self.offset, dtype=np.float64)[:, None, None]
        sc = np.asarray(self.scale, dtype=np.float64)[:, None, None]
        return off, sc


def normalize(img: RasterImage, stats: NormStats) -> RasterImage:
    off, sc = stats._columns(img.bands)
    # pixels are float32, so compare against the float32 offset
    off = off.astype(np.float32).astype(np.float64)
    out = np.clip((img.data.astype(np.float64) - off) / sc, -1.0, 1.0)
    return img.replace(out, value_range=ValueRange.UNIT_SIGNED)


def denormalize(img: RasterImage, stats: NormStats) -> RasterImage:
    if img.value_range is not ValueRange.UNIT_SIGNED:
        raise ValueError("denormalize expects a UNIT_SIGNED image")
    off, sc = stats._columns(img.bands)
    return img.replace(img.data.astype(np.float64) * sc + off, value_range=ValueRange.RAW)


def concat_channels(imgs: Sequence[RasterImage]) -> RasterImage:
    """Stack images along the band axis, preserving input order.

    The result takes the first image's kind (MS if that is a mask) and is
    UNIT_SIGNED only if all inputs are.
    """
    imgs = list(imgs)
    if not imgs:
        raise ValueError("concat_channels needs at least one image")
    if len(imgs) == 1:
        return imgs[0]
    h, w = imgs[0].height, imgs[0].width
    for im in imgs[1:]:
        if (im.height, im.width) != (h, w):
            raise SizeMismatch(f"cannot concatenate {h}x{w} with {im.height}x{im.width}")
    vr = (ValueRange.UNIT_SIGNED if all(im.value_range is ValueRange.UNIT_SIGNED for im in imgs)
          else ValueRange.RAW)
    kind = imgs[0].kind if imgs[0].kind is not Kind.MASK else Kind.MS
    return RasterImage(np.concatenate([im.data for im in imgs], axis=0), kind=kind, value_range=vr)


def to_bytes(img: RasterImage) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, img.height, img.width, img.bands, int(img.kind))
    return header + img.data.astype("<f4", copy=False).tobytes(order="C")


def from_bytes(buf: bytes) -> RasterImage:
    if len(buf) < _HEADER.size:
        raise FormatError("file shorter than BIRF header")
    magic, version, h, w, b, kind = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported BIRF version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise FormatError(f"unknown kind byte {kind}") from None
    expected = h * w * b * 4
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(b, h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError("payload contains non-finite values")
    # The format carries no range flag: anything inside [-1, 1] is network-ready.
    vr = ValueRange.UNIT_SIGNED if data.size and data.min() >= -1 and data.max() <= 1 else ValueRange.RAW
    try:
        return RasterImage(data, kind=kind, value_range=vr)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_raster(img: RasterImage, path) -> None:
    Path(path).write_bytes(to_bytes(img))


def read_raster(path) -> RasterImage:
    return from_bytes(Path(path).read_bytes())
