"""Small, reproducible experiments on synthetic scenes.

Two experiments back the acceptance suite and the scripts in ``scripts/``:
an overfit run on one scene and a strategy ablation with a held-out scene.
Both run on one CPU thread in minutes, so the networks are narrower than
the full-scale defaults in :class:`~hetfuse.train.TrainConfig`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from hetfuse.datagen import SceneSpec, make_observation_set, simulate_scene
from hetfuse.degrade import SpatialDegradeSpec
from hetfuse.loss import LossWeights
from hetfuse.metrics import psnr
from hetfuse.strategy import FusionStrategy
from hetfuse.train import TrainConfig, fuse, train

# window for the "final" content loss, smoothing minibatch noise
FINAL_WINDOW = 20


@dataclass(frozen=True)
class NetSize:
    base_width: int = 32
    n_res_blocks: int = 3
    disc_widths: tuple[int, ...] = (32, 64, 128, 256)


@dataclass(frozen=True)
class OverfitExperiment:
    size: int = 64
    bands: int = 3
    sar_bands: int = 2
    ratio: int = 4
    change_fraction: float = 0.2
    scene_seed: int = 1
    strategy: str = "hsst"
    steps: int = 2000
    batch_size: int = 4
    patch_size: int = 32
    lr: float = 2e-3
    lr_decay_start: int = 1000
    lam: float = 100.0
    seed: int = 0
    net: NetSize = NetSize()

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(self.size, self.size, bands=self.bands, sar_bands=self.sar_bands,
                         change_fraction=self.change_fraction, ratio=self.ratio, seed=self.scene_seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(strategy=self.strategy, batch_size=self.batch_size, steps=self.steps,
                           lr=self.lr, lr_decay_start=self.lr_decay_start, weights=LossWeights(lam=self.lam),
                           degrade=SpatialDegradeSpec(self.ratio), seed=self.seed, patch_size=self.patch_size,
                           bands=self.bands, sar_bands=self.sar_bands,
                           n_res_blocks=self.net.n_res_blocks, base_width=self.net.base_width,
                           disc_widths=self.net.disc_widths)


@dataclass
class OverfitResult:
    psnr_fused: float
    psnr_bicubic: float
    lcon_first: float
    lcon_final: float
    seconds: float
    rows: list = field(default_factory=list, repr=False)

    @property
    def gain_db(self) -> float:
        return self.psnr_fused - self.psnr_bicubic

    @property
    def lcon_drop(self) -> float:
        return 1.0 - self.lcon_final / self.lcon_first


def final_lcon(rows) -> float:
    return float(np.mean([r["L_con"] for r in rows[-FINAL_WINDOW:]]))


def run_overfit(exp: OverfitExperiment, out_dir=None) -> OverfitResult:
    scene = simulate_scene(exp.scene_spec())
    obs = make_observation_set(scene, exp.strategy, SpatialDegradeSpec(exp.ratio))
    t0 = time.perf_counter()
    state, rows = train(exp.train_config(), [obs], out_dir=out_dir)
    seconds = time.perf_counter() - t0
    return OverfitResult(psnr_fused=psnr(fuse(state, obs), obs.label),
                         psnr_bicubic=psnr(obs.x_tilde_up, obs.label),
                         lcon_first=rows[0]["L_con"], lcon_final=final_lcon(rows),
                         seconds=seconds, rows=rows)


@dataclass(frozen=True)
class AblationExperiment:
    """Train each strategy on the same scenes and budget, score on a held-out scene."""

    size: int = 64
    ratio: int = 4
    change_fraction: float = 0.2
    speckle_looks: int = 16
    train_seeds: tuple[int, ...] = tuple(range(11, 19))
    test_seed: int = 99
    test_size: int = 128
    strategies: tuple[str, ...] = ("hss", "st", "hsst")
    steps: int = 2000
    batch_size: int = 4
    patch_size: int = 32
    lr: float = 2e-3
    lr_decay_start: int = 1000
    lam: float = 100.0
    seed: int = 0
    net: NetSize = NetSize(16, 3, (16, 32, 64, 128))

    def scene_spec(self, seed: int, size: int | None = None) -> SceneSpec:
        size = size or self.size
        return SceneSpec(size, size, change_fraction=self.change_fraction,
                         speckle_looks=self.speckle_looks, ratio=self.ratio, seed=seed)

    def train_config(self, strategy: str) -> TrainConfig:
        return TrainConfig(strategy=strategy, batch_size=self.batch_size, steps=self.steps, lr=self.lr,
                           lr_decay_start=self.lr_decay_start, weights=LossWeights(lam=self.lam),
                           degrade=SpatialDegradeSpec(self.ratio), seed=self.seed, patch_size=self.patch_size,
                           n_res_blocks=self.net.n_res_blocks, base_width=self.net.base_width,
                           disc_widths=self.net.disc_widths)


@dataclass
class AblationResult:
    psnr: dict[str, float]
    psnr_bicubic: float
    seconds: dict[str, float]

    def margin(self, target: str = "hsst") -> float:
        """PSNR of ``target`` minus the best other strategy."""
        others = [v for k, v in self.psnr.items() if k != target]
        return self.psnr[target] - max(others)


def run_ablation(exp: AblationExperiment) -> AblationResult:
    deg = SpatialDegradeSpec(exp.ratio)
    train_scenes = [simulate_scene(exp.scene_spec(s)) for s in exp.train_seeds]
    test_scene = simulate_scene(exp.scene_spec(exp.test_seed, exp.test_size))
    scores, seconds = {}, {}
    bicubic = None
    for name in exp.strategies:
        strategy = FusionStrategy(name)
        data = [make_observation_set(sc, strategy, deg) for sc in train_scenes]
        test = make_observation_set(test_scene, strategy, deg)
        t0 = time.perf_counter()
        state, _ = train(exp.train_config(name), data)
        seconds[name] = time.perf_counter() - t0
        scores[name] = psnr(fuse(state, test), test.label)
        bicubic = psnr(test.x_tilde_up, test.label)
    return AblationResult(scores, bicubic, seconds)

