"""Explicit spatial degradation, bicubic up-sampling and cloud masking.

Blur+decimation and bicubic interpolation are both separable linear
maps, so each is realized as a pair of 1-D operator matrices applied
along rows and columns. The same matrices drive the differentiable
Resize branch used during training (see :func:`separable_apply`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from hetfuse.errors import NotDivisible, SizeMismatch
from hetfuse.imagery import Kind, RasterImage, ValueRange

GAUSS_TRUNCATE = 4.0
CUBIC_A = -0.5


@dataclass(frozen=True)
class SpatialDegradeSpec:
    ratio: int = 4
    blur_sigma: float | None = None  # None -> ratio / 2

    def __post_init__(self):
        if int(self.ratio) != self.ratio or self.ratio < 1:
            raise ValueError(f"ratio must be a positive integer, got {self.ratio}")
        if self.blur_sigma is not None and not self.blur_sigma >= 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")

    @property
    def sigma(self) -> float:
        return self.ratio / 2 if self.blur_sigma is None else float(self.blur_sigma)


@dataclass(frozen=True, eq=False)
class CloudSpec:
    mask: RasterImage
    fill_value: float = 1.0

    def __post_init__(self):
        if self.mask.kind is not Kind.MASK:
            raise ValueError("cloud mask must be a MASK raster")
        if not -1 <= self.fill_value <= 1:
            raise ValueError("fill_value must lie in [-1, 1]")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps, radius ``int(4 sigma + 0.5)``."""
    if sigma == 0:
        return np.ones(1)
    radius = int(GAUSS_TRUNCATE * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: ... c b a | a b c ... | c b a ...
    i = np.mod(i, 2 * n)
    return np.where(i >= n, 2 * n - 1 - i, i)


@lru_cache(maxsize=128)
def blur_decimate_matrix(n: int, ratio: int, sigma: float) -> np.ndarray:
    """(n // ratio) x n matrix: reflective Gaussian blur, then keep every
    ``ratio``-th sample starting at ``ratio // 2``."""
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    rows = np.arange(n // ratio) * ratio + ratio // 2
    mat = np.zeros((len(rows), n))
    for t, w in enumerate(k):
        cols = reflect_index(rows + t - r, n)
        np.add.at(mat, (np.arange(len(rows)), cols), w)
    mat.setflags(write=False)
    return mat


def cubic_weights(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution weights for taps at offsets -1, 0, 1, 2."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    ad = np.abs(d)
    near = (a + 2) * ad**3 - (a + 3) * ad**2 + 1
    far = a * ad**3 - 5 * a * ad**2 + 8 * a * ad - 4 * a
    return np.where(ad <= 1, near, np.where(ad < 2, far, 0.0))


@lru_cache(maxsize=128)
def bicubic_matrix(m: int, ratio: int) -> np.ndarray:
    """(ratio*m) x m bicubic interpolation matrix with edge replication.

    Output sample ``i`` sits at source coordinate ``(i + 0.5) / ratio - 0.5``
    (pixel-center alignment).
    """
    out = ratio * m
    src = (np.arange(out) + 0.5) / ratio - 0.5
    base = np.floor(src)
    w = cubic_weights(src - base)
    mat = np.zeros((out, m))
    for j in range(4):
        cols = np.clip(base.astype(int) - 1 + j, 0, m - 1)
        np.add.at(mat, (np.arange(out), cols), w[:, j])
    mat.setflags(write=False)
    return mat


def resize_matrix(n: int, spec: SpatialDegradeSpec) -> np.ndarray:
    """n x n operator for down-then-up resizing along one axis."""
    return bicubic_matrix(n // spec.ratio, spec.ratio) @ blur_decimate_matrix(n, spec.ratio, spec.sigma)


def separable_apply(t: torch.Tensor, rows: np.ndarray, cols: np.ndarray) -> torch.Tensor:
    """``rows @ t @ cols.T`` over the last two axes, in float64.

    Both the raster path and the differentiable training branch call
    this one routine so their outputs agree bit for bit.
    """
    r = torch.from_numpy(np.array(rows, np.float64))
    c = torch.from_numpy(np.array(cols.T, np.float64))
    return torch.matmul(torch.matmul(r, t.to(torch.float64)), c)


def _separable(data: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return separable_apply(torch.from_numpy(np.asarray(data, np.float64)), rows, cols).numpy()


def spatial_degrade(x: RasterImage, spec: SpatialDegradeSpec) -> RasterImage:
    s = spec.ratio
    if x.height % s or x.width % s:
        raise NotDivisible(f"{x.height}x{x.width} is not divisible by ratio {s}")
    if s == 1 and spec.sigma == 0:
        return x
    rows = blur_decimate_matrix(x.height, s, spec.sigma)
    cols = blur_decimate_matrix(x.width, s, spec.sigma)
    return x.replace(_separable(x.data, rows, cols))


def bicubic_upsample(x: RasterImage, ratio: int) -> RasterImage:
    if int(ratio) != ratio or ratio < 1:
        raise ValueError(f"ratio must be a positive integer, got {ratio}")
    if ratio == 1:
        return x
    rows = bicubic_matrix(x.height, ratio)
    cols = bicubic_matrix(x.width, ratio)
    out = _separable(x.data, rows, cols)
    if x.value_range is ValueRange.UNIT_SIGNED:
        # cubic overshoot at sharp edges
        out = np.clip(out, -1.0, 1.0)
    return x.replace(out)


def apply_cloud_mask(x: RasterImage, spec: CloudSpec) -> RasterImage:
    m = spec.mask
    if (m.height, m.width) != (x.height, x.width):
        raise SizeMismatch(f"mask {m.height}x{m.width} does not match image {x.height}x{x.width}")
    out = np.where(m.data == 1, np.float32(spec.fill_value), x.data)
    return x.replace(out)


def resize_branch(fusion: RasterImage, spec: SpatialDegradeSpec,
                  cloud: CloudSpec | None = None) -> RasterImage:
    """Degrade then re-upsample to full size, optionally masking clouds last."""
    out = bicubic_upsample(spatial_degrade(fusion, spec), spec.ratio)
    if cloud is not None:
        out = apply_cloud_mask(out, cloud)
    return out
