"""Independent reference implementations used by the unit and acceptance tests.

Each oracle is written from the textbook definition with explicit loops
and shares no code with the package.
"""

import math

import numpy as np
import torch


# ------------------------------------------------------------ degradation

def dense_degrade_oracle(x: np.ndarray, s: int, sigma: float) -> np.ndarray:
    """Direct 2-D convolution with a symmetric-padded border, then point decimation."""
    if sigma == 0:
        blurred = x.astype(np.float64)
    else:
        r = int(4.0 * sigma + 0.5)
        t = np.arange(-r, r + 1)
        u = t / sigma
        g = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / 2)
        g /= g.sum()
        blurred = np.empty(x.shape)
        for b in range(x.shape[0]):
            p = np.pad(x[b].astype(np.float64), r, mode="symmetric")
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    blurred[b, i, j] = (p[i:i + 2 * r + 1, j:j + 2 * r + 1] * g).sum()
    return blurred[:, s // 2::s, s // 2::s]


# ---------------------------------------------------------------- metrics

def sam_oracle(x, y):
    angles = []
    for i in range(x.shape[1]):
        for j in range(x.shape[2]):
            u, v = x[:, i, j], y[:, i, j]
            nu, nv = math.sqrt(sum(a * a for a in u)), math.sqrt(sum(a * a for a in v))
            if nu == 0 or nv == 0:
                continue
            c = sum(a * b for a, b in zip(u, v)) / (nu * nv)
            angles.append(math.degrees(math.acos(max(-1.0, min(1.0, c)))))
    return sum(angles) / len(angles)


def ergas_oracle(x, y, ratio):
    acc = 0.0
    for b in range(x.shape[0]):
        d = (x[b] - y[b]).ravel()
        rmse2 = sum(v * v for v in d) / d.size
        mu = sum(y[b].ravel()) / d.size
        acc += rmse2 / mu**2
    return 100 * ratio * math.sqrt(acc / x.shape[0])


def q_oracle(x, y, block=32):
    h, w = x.shape[1:]
    bh, bw = min(block, h), min(block, w)
    bands = []
    for b in range(x.shape[0]):
        vals = []
        for i in range(0, h - bh + 1, bh):
            for j in range(0, w - bw + 1, bw):
                a, c = x[b, i:i + bh, j:j + bw].ravel(), y[b, i:i + bh, j:j + bw].ravel()
                n = a.size
                ma, mc = sum(a) / n, sum(c) / n
                va = sum((v - ma) ** 2 for v in a) / n
                vc = sum((v - mc) ** 2 for v in c) / n
                cov = sum((u - ma) * (v - mc) for u, v in zip(a, c)) / n
                vals.append(4 * cov * ma * mc / ((va + vc) * (ma**2 + mc**2)))
        bands.append(sum(vals) / len(vals))
    return sum(bands) / len(bands)


def psnr_oracle(x, y, peak):
    d = (x - y).ravel()
    return 10 * math.log10(peak**2 / (sum(v * v for v in d) / d.size))


def ssim_oracle(x, y, peak):
    r = np.arange(11) - 5
    g = np.exp(-r**2 / (2 * 1.5**2))
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    out = []
    for b in range(x.shape[0]):
        vals = []
        for i in range(x.shape[1] - 10):
            for j in range(x.shape[2] - 10):
                p, q = x[b, i:i + 11, j:j + 11], y[b, i:i + 11, j:j + 11]
                mp, mq = (win * p).sum(), (win * q).sum()
                vp = (win * (p - mp) ** 2).sum()
                vq = (win * (q - mq) ** 2).sum()
                cov = (win * (p - mp) * (q - mq)).sum()
                vals.append((2 * mp * mq + c1) * (2 * cov + c2) / ((mp**2 + mq**2 + c1) * (vp + vq + c2)))
        out.append(sum(vals) / len(vals))
    return out


def random_pair(seed, size=16, bands=3):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0.1, 1.0, (bands, size, size))
    res = np.clip(ref + rng.normal(0, 0.1, ref.shape), 0.01, None)
    return res, ref


# --------------------------------------------------------------- gradients

FD_STEP = 1e-4
REL_TOL = 1e-3


def fd_check(loss_of, tensors, skip=None):
    """Compare autograd with central differences entry by entry; returns the
    number of entries checked. ``skip(k, i)`` excludes entry ``i`` of input ``k``."""
    leaves = [t.clone().requires_grad_(True) for t in tensors]
    loss_of(*leaves).backward()
    checked = 0
    for k, leaf in enumerate(leaves):
        base = tensors[k]
        flat = base.flatten()
        for i in range(flat.numel()):
            if skip is not None and skip(k, i):
                continue
            plus, minus = flat.clone(), flat.clone()
            plus[i] += FD_STEP
            minus[i] -= FD_STEP
            args_p = [t if j != k else plus.view_as(base) for j, t in enumerate(tensors)]
            args_m = [t if j != k else minus.view_as(base) for j, t in enumerate(tensors)]
            numeric = (loss_of(*args_p).item() - loss_of(*args_m).item()) / (2 * FD_STEP)
            analytic = 0.0 if leaf.grad is None else leaf.grad.flatten()[i].item()
            if abs(analytic - numeric) > REL_TOL * max(abs(numeric), abs(analytic), 1e-8):
                raise AssertionError(f"input {k} entry {i}: autograd {analytic} vs numeric {numeric}")
            checked += 1
    return checked


def t64(a):
    return torch.tensor(np.asarray(a, np.float64))
