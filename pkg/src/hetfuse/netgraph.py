"""Residual encoder-decoder generators and PatchGAN discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from hetfuse.errors import ShapeError

INIT_STD = 0.02
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int
    out_channels: int
    n_res_blocks: int = 6
    base_width: int = 64

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "n_res_blocks", "base_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int
    widths: tuple[int, ...] = (64, 128, 256, 512)
    kernel: int = 4
    strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "strides", tuple(self.strides))
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if len(self.widths) != 4 or len(self.strides) != 5:
            raise ValueError("discriminator has four hidden widths and five strides")


class ConvBlock(nn.Module):
    """Conv (or transposed conv) followed by optional BN and activation."""

    def __init__(self, conv: nn.Module, bn: bool, act: nn.Module | None):
        super().__init__()
        self.conv = conv
        self.bn = nn.BatchNorm2d(conv.out_channels, momentum=BN_MOMENTUM) if bn else None
        self.act = act

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        if self.act is not None:
            x = self.act(x)
        return x


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body1 = ConvBlock(nn.Conv2d(width, width, 3, padding=1, bias=False), True, nn.ReLU())
        self.body2 = ConvBlock(nn.Conv2d(width, width, 3, padding=1, bias=False), True, None)

    def forward(self, x):
        return x + self.body2(self.body1(x))


def _reflect_conv7(cin: int, cout: int, bias: bool) -> nn.Module:
    seq = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(cin, cout, 7, bias=bias))
    seq.out_channels = cout
    return seq


class Generator(nn.Module):
    """extract -> enc1 -> enc2 -> res0..resK -> dec1 -> dec2 -> out (tanh).

    Spatial size is preserved for inputs whose height and width are
    multiples of four.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        self.extract = ConvBlock(_reflect_conv7(spec.in_channels, w, bias=False), True, nn.ReLU())
        self.enc1 = ConvBlock(nn.Conv2d(w, 2 * w, 3, stride=2, padding=1, bias=False), True, nn.ReLU())
        self.enc2 = ConvBlock(nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1, bias=False), True, nn.ReLU())
        self.res = nn.Sequential(*[ResidualBlock(4 * w) for _ in range(spec.n_res_blocks)])
        self.dec1 = ConvBlock(nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1,
                                                 bias=False), True, nn.ReLU())
        self.dec2 = ConvBlock(nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1,
                                                 bias=False), True, nn.ReLU())
        self.out = ConvBlock(_reflect_conv7(w, spec.out_channels, bias=True), False, nn.Tanh())

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (N, {self.spec.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"height and width must be multiples of 4, got {tuple(x.shape[2:])}")
        h = self.enc2(self.enc1(self.extract(x)))
        h = self.res(h)
        return self.out(self.dec2(self.dec1(h)))


class Discriminator(nn.Module):
    """PatchGAN: Conv+LReLU, 3x Conv+BN+LReLU, Conv+Sigmoid; zero padding 1."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        k, s, slope = spec.kernel, spec.strides, spec.leaky_slope
        w = (spec.in_channels,) + spec.widths
        self.conv1 = ConvBlock(nn.Conv2d(w[0], w[1], k, s[0], 1), False, nn.LeakyReLU(slope))
        self.conv2 = ConvBlock(nn.Conv2d(w[1], w[2], k, s[1], 1, bias=False), True, nn.LeakyReLU(slope))
        self.conv3 = ConvBlock(nn.Conv2d(w[2], w[3], k, s[2], 1, bias=False), True, nn.LeakyReLU(slope))
        self.conv4 = ConvBlock(nn.Conv2d(w[3], w[4], k, s[3], 1, bias=False), True, nn.LeakyReLU(slope))
        self.conv5 = ConvBlock(nn.Conv2d(w[4], 1, k, s[4], 1), False, nn.Sigmoid())

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (N, {self.spec.in_channels}, H, W) input, got {tuple(x.shape)}")
        out_hw = patch_map_size(x.shape[2], self.spec), patch_map_size(x.shape[3], self.spec)
        if min(out_hw) < 1:
            raise ShapeError(f"input {tuple(x.shape[2:])} too small for the discriminator")
        for block in (self.conv1, self.conv2, self.conv3, self.conv4, self.conv5):
            x = block(x)
        return x


def patch_map_size(n: int, spec: DiscriminatorSpec) -> int:
    for stride in spec.strides:
        n = (n + 2 - spec.kernel) // stride + 1
    return n


def init_params(net: nn.Module, seed: int) -> nn.Module:
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            owner = name.rsplit(".", 2)[-2]
            if owner == "bn":
                if name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            elif name.endswith("weight"):
                p.normal_(0.0, INIT_STD, generator=gen)
            else:
                p.zero_()
    return net


def build_generator(spec: GeneratorSpec, seed: int = 0) -> Generator:
    return init_params(Generator(spec), seed)


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> Discriminator:
    return init_params(Discriminator(spec), seed)


def generator_forward(net: Generator, x: Tensor) -> Tensor:
    return net(x)


def discriminator_forward(net: Discriminator, x: Tensor) -> Tensor:
    return net(x)


def stable_name(prefix: str, torch_name: str) -> str:
    """``enc1.conv.weight`` under ``g_f`` -> ``g_f/enc1/conv/weight``.

    Sequential indices inside the 7x7 reflection-padded convs are hidden
    so that the public name stays ``.../conv/weight``.
    """
    parts = torch_name.split(".")
    if len(parts) >= 3 and parts[-3] == "conv" and parts[-2] == "1":
        parts = parts[:-2] + parts[-1:]
    return "/".join([prefix] + parts)


def named_tensors(prefix: str, net: nn.Module) -> dict[str, Tensor]:
    """Parameters and BN running statistics under stable names."""
    out = {}
    for name, t in net.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        out[stable_name(prefix, name)] = t
    return out


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


class frozen_running_stats:
    """Context manager: BN layers still normalize with batch statistics but
    leave their running averages untouched."""

    def __init__(self, *nets: nn.Module):
        self.bns = [m for net in nets for m in net.modules() if isinstance(m, nn.BatchNorm2d)]

    def __enter__(self):
        self.saved = [m.momentum for m in self.bns]
        self.counts = [m.num_batches_tracked.clone() for m in self.bns]
        for m in self.bns:
            m.momentum = 0.0
        return self

    def __exit__(self, *exc):
        for m, mom, cnt in zip(self.bns, self.saved, self.counts):
            m.momentum = mom
            m.num_batches_tracked.copy_(cnt)
        return False
