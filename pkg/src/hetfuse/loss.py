"""Generator and discriminator objectives (least-squares adversarial + L1 content).

Every Frobenius / L1 term is a per-element mean over the batch, so a
``1/N`` sum over patches of per-patch means is simply the mean over all
elements of the stacked maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import torch
from torch import Tensor

from hetfuse.errors import ShapeError

CYCLE_ORDER = ("x_hat", "y", "z")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 10.0
    lam1: float = 1.0
    lam2: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.lam, self.lam1, self.lam2)):
            raise ValueError("loss weights must be finite")
        if self.lam < 0 or self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class CycleBundle:
    """Tensors entering the losses for one batch.

    ``cycle_out`` / ``cycle_target`` map member names (``x_hat``, ``y``,
    ``z``) to regenerated and original observations; members that a
    strategy does not use are simply absent (or ``None``) on both sides.
    """

    fusion: Tensor
    label: Tensor
    cycle_out: Mapping[str, Optional[Tensor]] = field(default_factory=dict)
    cycle_target: Mapping[str, Optional[Tensor]] = field(default_factory=dict)
    d_f_fake: Optional[Tensor] = None
    d_b_fake: Optional[Tensor] = None
    d_f_real: Optional[Tensor] = None
    d_b_real: Optional[Tensor] = None

    def cycle_pairs(self) -> list[tuple[Tensor, Tensor]]:
        pairs = []
        for key in CYCLE_ORDER:
            out, tgt = self.cycle_out.get(key), self.cycle_target.get(key)
            if out is None and tgt is None:
                continue
            if out is None or tgt is None:
                raise ShapeError(f"cycle member {key!r} present on only one side")
            pairs.append((out, tgt))
        return pairs


def _require(t: Optional[Tensor], name: str) -> Tensor:
    if t is None:
        raise ShapeError(f"bundle is missing {name}")
    return t


def _sq_to(t: Tensor, target: float) -> Tensor:
    return ((t - target) ** 2).mean()


def _l1(a: Tensor, b: Tensor, what: str) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    return (a - b).abs().mean()


def adversarial_loss(bundle: CycleBundle) -> Tensor:
    return (_sq_to(_require(bundle.d_f_fake, "d_f_fake"), 1.0)
            + _sq_to(_require(bundle.d_b_fake, "d_b_fake"), 1.0))


def content_loss(bundle: CycleBundle, weights: LossWeights = LossWeights()) -> Tensor:
    fusion_term = _l1(bundle.fusion, bundle.label, "fusion vs label")
    pairs = bundle.cycle_pairs()
    if pairs:
        out = torch.cat([o for o, _ in pairs], dim=1)
        tgt = torch.cat([t for _, t in pairs], dim=1)
        cycle_term = _l1(out, tgt, "cycle")
    else:
        cycle_term = fusion_term.new_zeros(())
    return weights.lam1 * fusion_term + weights.lam2 * cycle_term


def generator_loss(bundle: CycleBundle, weights: LossWeights = LossWeights()) -> Tensor:
    return adversarial_loss(bundle) + weights.lam * content_loss(bundle, weights)


def forward_discriminator_loss(bundle: CycleBundle) -> Tensor:
    return 0.5 * (_sq_to(_require(bundle.d_f_fake, "d_f_fake"), 0.0)
                  + _sq_to(_require(bundle.d_f_real, "d_f_real"), 1.0))


def backward_discriminator_loss(bundle: CycleBundle) -> Tensor:
    return 0.5 * (_sq_to(_require(bundle.d_b_real, "d_b_real"), 1.0)
                  + _sq_to(_require(bundle.d_b_fake, "d_b_fake"), 0.0))
