"""Full-reference fusion quality indices: SAM, ERGAS, Q, PSNR, SSIM.

All functions accept :class:`RasterImage` objects or ``(bands, H, W)``
arrays and compute in float64. Identity pairs give exactly the ideal
values (0, 0, 1, +inf, 1): expressions are arranged so that ``x == y``
makes numerator and denominator bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hetfuse.errors import DegenerateReference, ShapeError, TooSmall

EPS = 1e-12
Q_BLOCK = 32
SSIM_WIN = 11
SSIM_SIGMA = 1.5
DEFAULT_PEAK = 2.0


def _pair(result, reference) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(result, "data", result), dtype=np.float64)
    b = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if b.ndim == 2:
        b = b[None]
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"result {a.shape} and reference {b.shape} differ")
    return a, b


def sam(result, reference) -> float:
    """Mean spectral angle in degrees; pixels with a zero vector are skipped."""
    x, y = _pair(result, reference)
    if x.shape[0] < 2:
        raise ShapeError("SAM needs at least two bands")
    dot = (x * y).sum(axis=0)
    nx = (x * x).sum(axis=0)
    ny = (y * y).sum(axis=0)
    valid = (np.sqrt(nx) >= EPS) & (np.sqrt(ny) >= EPS)
    if not valid.any():
        return 0.0
    # sqrt(a*a) == a exactly, so cos is exactly 1 for parallel vectors
    cos = dot[valid] / np.sqrt(nx[valid] * ny[valid])
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).mean())


def ergas(result, reference, ratio: float = 1.0) -> float:
    """``100 * ratio * sqrt(mean_b(RMSE_b^2 / mu_b^2))`` with ``ratio`` = h/l."""
    x, y = _pair(result, reference)
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    mu = y.reshape(y.shape[0], -1).mean(axis=1)
    if np.any(np.abs(mu) < EPS):
        raise DegenerateReference("reference band mean is zero")
    mse = ((x - y) ** 2).reshape(x.shape[0], -1).mean(axis=1)
    return float(100.0 * ratio * math.sqrt(np.mean(mse / mu**2)))


def _q_block(a: np.ndarray, b: np.ndarray) -> float:
    ma, mb = a.mean(), b.mean()
    da, db = a - ma, b - mb
    va, vb, cov = (da * da).mean(), (db * db).mean(), (da * db).mean()
    corr = (cov + EPS) / (math.sqrt(va * vb) + EPS)
    lum = (2 * (ma * mb) + EPS) / (ma * ma + mb * mb + EPS)
    con = (2 * math.sqrt(va * vb) + EPS) / (va + vb + EPS)
    return corr * lum * con


def q_index(result, reference, block: int = Q_BLOCK) -> float:
    """Universal image quality index on non-overlapping tiles, averaged
    over tiles and bands. Images smaller than ``block`` form one tile."""
    x, y = _pair(result, reference)
    _, h, w = x.shape
    bh, bw = min(block, h), min(block, w)
    per_band = []
    for xb, yb in zip(x, y):
        vals = [_q_block(xb[i:i + bh, j:j + bw], yb[i:i + bh, j:j + bw])
                for i in range(0, h - bh + 1, bh) for j in range(0, w - bw + 1, bw)]
        per_band.append(np.mean(vals))
    return float(np.mean(per_band))


def psnr(result, reference, peak: float = DEFAULT_PEAK) -> float:
    x, y = _pair(result, reference)
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(((x - y) ** 2).mean())
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, win.shape), win)


def ssim(result, reference, peak: float = DEFAULT_PEAK) -> list[float]:
    """Per-band SSIM: 11x11 Gaussian window (sigma 1.5), valid positions only."""
    x, y = _pair(result, reference)
    if x.shape[1] < SSIM_WIN or x.shape[2] < SSIM_WIN:
        raise TooSmall(f"SSIM needs at least {SSIM_WIN}x{SSIM_WIN} pixels, got {x.shape[1:]}")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    win = gaussian_window()
    out = []
    for xb, yb in zip(x, y):
        mx, my = _filter_valid(xb, win), _filter_valid(yb, win)
        vx = _filter_valid(xb * xb, win) - mx * mx
        vy = _filter_valid(yb * yb, win) - my * my
        cov = _filter_valid(xb * yb, win) - mx * my
        num = (2 * (mx * my) + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        out.append(float((num / den).mean()))
    return out


@dataclass(frozen=True)
class MetricsReport:
    sam_degrees: float
    ergas: float
    q: float
    psnr_db: float
    ssim_per_band: tuple[float, ...]

    @property
    def ssim_avg(self) -> float:
        return float(np.mean(self.ssim_per_band))

    def header(self) -> list[str]:
        if len(self.ssim_per_band) == 3:
            names = ["ssim_b", "ssim_g", "ssim_r"]
        else:
            names = [f"ssim_{k + 1}" for k in range(len(self.ssim_per_band))]
        return ["sam", "ergas", "q", "psnr"] + names + ["ssim_avg"]

    def values(self) -> list[float]:
        return [self.sam_degrees, self.ergas, self.q, self.psnr_db, *self.ssim_per_band, self.ssim_avg]

    def csv_header(self) -> str:
        return ",".join(self.header())

    def csv_row(self) -> str:
        return ",".join(format_value(v) for v in self.values())


def format_value(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".10g")


def evaluate_all(result, reference, ratio: float = 1.0, peak: float = DEFAULT_PEAK) -> MetricsReport:
    return MetricsReport(
        sam_degrees=sam(result, reference),
        ergas=ergas(result, reference, ratio),
        q=q_index(result, reference),
        psnr_db=psnr(result, reference, peak),
        ssim_per_band=tuple(ssim(result, reference, peak)),
    )
