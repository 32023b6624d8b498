"""Training cycle, inference and checkpoints.

One training step performs three sequential updates:

1. both generators jointly on ``L_adv + lam * L_con``;
2. the forward discriminator on fusion (fake) vs label (real);
3. the backward discriminator on regenerated vs original observations.

Generator outputs are detached for (2) and (3). While the generators are
updated the discriminators run in training mode (batch statistics) but
their running averages are frozen, so every update touches only its
own network.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from hetfuse.datagen import ObservationSet
from hetfuse.degrade import SpatialDegradeSpec, bicubic_matrix, blur_decimate_matrix, separable_apply
from hetfuse.errors import DivergenceError, FormatError, ShapeError, StrategyMismatch
from hetfuse.imagery import Kind, RasterImage, ValueRange
from hetfuse.loss import (
    CycleBundle,
    LossWeights,
    adversarial_loss,
    backward_discriminator_loss,
    content_loss,
    forward_discriminator_loss,
)
from hetfuse.netgraph import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    frozen_running_stats,
    named_tensors,
    stable_name,
)
from hetfuse.strategy import FusionStrategy

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_G", "L_adv", "L_con", "L_DF", "L_DB")
NETS = ("g_f", "g_b", "d_f", "d_b")


@dataclass(frozen=True)
class TrainConfig:
    strategy: FusionStrategy = FusionStrategy.HSST
    batch_size: int = 4
    steps: int = 1000
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    weights: LossWeights = LossWeights()
    degrade: SpatialDegradeSpec = SpatialDegradeSpec(4)
    cloud: bool = False
    fill_value: float = 1.0
    seed: int = 0
    checkpoint_interval: int = 0
    patch_size: int = 32
    bands: int = 3
    sar_bands: int = 2
    n_res_blocks: int = 6
    base_width: int = 64
    disc_widths: tuple[int, ...] = (64, 128, 256, 512)
    # 0 keeps lr constant; k > 0 decays it linearly towards 0 after step k
    lr_decay_start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", FusionStrategy.parse(self.strategy))
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "disc_widths", tuple(self.disc_widths))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.patch_size < 4 or self.patch_size % 4:
            raise ValueError("patch_size must be a positive multiple of 4")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.lr_decay_start < 0:
            raise ValueError("lr_decay_start must be >= 0")

    @property
    def in_channels(self) -> int:
        return self.strategy.in_channels(self.bands, self.sar_bands)

    def generator_specs(self) -> tuple[GeneratorSpec, GeneratorSpec]:
        fwd = GeneratorSpec(self.in_channels, self.bands, self.n_res_blocks, self.base_width)
        bwd = GeneratorSpec(self.bands, self.strategy.backward_out_channels(self.bands, self.sar_bands),
                            self.n_res_blocks, self.base_width)
        return fwd, bwd

    def discriminator_specs(self) -> tuple[DiscriminatorSpec, DiscriminatorSpec]:
        return (DiscriminatorSpec(self.bands, self.disc_widths),
                DiscriminatorSpec(self.in_channels, self.disc_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["betas"] = list(self.betas)
        d["disc_widths"] = list(self.disc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["degrade"] = SpatialDegradeSpec(**d.get("degrade", {}))
        return cls(**d)


@dataclass
class TrainState:
    config: TrainConfig
    g_f: Generator
    g_b: Generator
    d_f: Discriminator
    d_b: Discriminator
    opt_g: torch.optim.Adam
    opt_df: torch.optim.Adam
    opt_db: torch.optim.Adam
    step: int = 0

    @property
    def strategy(self) -> FusionStrategy:
        return self.config.strategy

    def nets(self) -> dict[str, torch.nn.Module]:
        return {"g_f": self.g_f, "g_b": self.g_b, "d_f": self.d_f, "d_b": self.d_b}

    def optimizers(self) -> dict[str, tuple[torch.optim.Adam, tuple[str, ...]]]:
        return {"opt_g": (self.opt_g, ("g_f", "g_b")),
                "opt_df": (self.opt_df, ("d_f",)),
                "opt_db": (self.opt_db, ("d_b",))}


def init_state(config: TrainConfig) -> TrainState:
    fwd, bwd = config.generator_specs()
    dfs, dbs = config.discriminator_specs()
    base = 4 * config.seed
    g_f = build_generator(fwd, base)
    g_b = build_generator(bwd, base + 1)
    d_f = build_discriminator(dfs, base + 2)
    d_b = build_discriminator(dbs, base + 3)

    def adam(params):
        return torch.optim.Adam(params, lr=config.lr, betas=config.betas)

    return TrainState(config, g_f, g_b, d_f, d_b,
                      opt_g=adam(list(g_f.parameters()) + list(g_b.parameters())),
                      opt_df=adam(d_f.parameters()), opt_db=adam(d_b.parameters()))


# ----------------------------------------------------------------- tensors

def _stack(images: Sequence[RasterImage]) -> Tensor:
    return torch.from_numpy(np.stack([np.asarray(im.data, dtype=np.float32) for im in images]))


def resize_tensor(x: Tensor, spec: SpatialDegradeSpec, mask: Optional[Tensor] = None,
                  fill_value: float = 1.0) -> Tensor:
    """Differentiable Resize branch on an (N, C, H, W) batch.

    Mirrors the raster path step for step (float64 operators, float32
    storage between stages, clamp after up-sampling) so that applying it
    to a label reproduces the simulator's ``x_tilde_up`` exactly.
    """
    s = spec.ratio
    h, w = x.shape[2], x.shape[3]
    low = separable_apply(x, blur_decimate_matrix(h, s, spec.sigma),
                          blur_decimate_matrix(w, s, spec.sigma)).to(x.dtype)
    out = separable_apply(low, bicubic_matrix(h // s, s), bicubic_matrix(w // s, s))
    out = out.clamp(-1.0, 1.0).to(x.dtype)
    if mask is not None:
        out = torch.where(mask > 0.5, torch.full_like(out, fill_value), out)
    return out


def _set_requires_grad(requires: bool, *nets: torch.nn.Module) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(requires)


def _split_regenerated(regen: Tensor, strategy: FusionStrategy, sar_bands: int) -> dict[str, Tensor]:
    out = {}
    offset = 0
    if strategy.uses_sar:
        out["y"] = regen[:, :sar_bands]
        offset = sar_bands
    if strategy.uses_temporal:
        out["z"] = regen[:, offset:]
    return out


def _check_finite(step: int, **losses: Tensor) -> None:
    for name, v in losses.items():
        if not torch.isfinite(v).all():
            raise DivergenceError(step, name)


def lr_at(config: TrainConfig, step: int) -> float:
    """Learning rate used by 1-based ``step``; depends on nothing else, so resumes match."""
    start = config.lr_decay_start
    if start == 0 or step <= start:
        return config.lr
    remaining = max(config.steps - step + 1, 0)
    return config.lr * remaining / max(config.steps - start + 1, 1)


def train_step(state: TrainState, batch: Sequence[ObservationSet]) -> tuple[TrainState, dict[str, float]]:
    """Three sequential updates on one batch; mutates and returns ``state``."""
    cfg = state.config
    strategy = cfg.strategy
    for obs in batch:
        if obs.strategy is not strategy:
            raise StrategyMismatch(f"batch sample is {obs.strategy.value}, training {strategy.value}")
        if obs.label is None:
            raise ShapeError("training samples need a label")
    step_no = state.step + 1
    inputs = _stack([obs.inputs() for obs in batch])
    label = _stack([obs.label for obs in batch])
    targets = {m: _stack([obs.member(m) for obs in batch]) for m in strategy.members}
    mask = None
    if cfg.cloud:
        if any(obs.mask is None for obs in batch):
            raise ShapeError("cloud mode needs a mask on every sample")
        mask = _stack([obs.mask for obs in batch])

    for net in state.nets().values():
        net.train()
    lr = lr_at(cfg, step_no)
    for opt, _ in state.optimizers().values():
        for group in opt.param_groups:
            group["lr"] = lr

    # (1) generators
    _set_requires_grad(False, state.d_f, state.d_b)
    with frozen_running_stats(state.d_f, state.d_b):
        fusion = state.g_f(inputs)
        cycle_out = {"x_hat": resize_tensor(fusion, cfg.degrade, mask, cfg.fill_value)}
        cycle_out.update(_split_regenerated(state.g_b(fusion), strategy, cfg.sar_bands))
        regenerated = torch.cat([cycle_out[m] for m in strategy.members], dim=1)
        bundle = CycleBundle(fusion, label, cycle_out, targets,
                             d_f_fake=state.d_f(fusion), d_b_fake=state.d_b(regenerated))
        l_adv = adversarial_loss(bundle)
        l_con = content_loss(bundle, cfg.weights)
        l_g = l_adv + cfg.weights.lam * l_con
    _check_finite(step_no, L_G=l_g)
    state.opt_g.zero_grad(set_to_none=True)
    l_g.backward()
    state.opt_g.step()
    _set_requires_grad(True, state.d_f, state.d_b)

    # (2) forward discriminator
    fusion_c = fusion.detach()
    l_df = forward_discriminator_loss(CycleBundle(fusion_c, label, d_f_fake=state.d_f(fusion_c),
                                                  d_f_real=state.d_f(label)))
    _check_finite(step_no, L_DF=l_df)
    state.opt_df.zero_grad(set_to_none=True)
    l_df.backward()
    state.opt_df.step()

    # (3) backward discriminator
    regenerated_c = regenerated.detach()
    l_db = backward_discriminator_loss(CycleBundle(fusion_c, label, d_b_real=state.d_b(inputs),
                                                   d_b_fake=state.d_b(regenerated_c)))
    _check_finite(step_no, L_DB=l_db)
    state.opt_db.zero_grad(set_to_none=True)
    l_db.backward()
    state.opt_db.step()

    state.step = step_no
    losses = {"step": step_no, "L_G": l_g.item(), "L_adv": l_adv.item(), "L_con": l_con.item(),
              "L_DF": l_df.item(), "L_DB": l_db.item()}
    return state, losses


def sample_batch(dataset: Sequence[ObservationSet], config: TrainConfig, step: int) -> list[ObservationSet]:
    """Uniform random patches (with replacement) for 1-based ``step``; a pure
    function of (seed, step) so batches can be regenerated anywhere."""
    rng = np.random.default_rng([config.seed, step])
    out = []
    ps = config.patch_size
    for _ in range(config.batch_size):
        obs = dataset[int(rng.integers(len(dataset)))]
        top = int(rng.integers(obs.height - ps + 1))
        left = int(rng.integers(obs.width - ps + 1))
        out.append(obs.crop(top, left, ps))
    return out


def _validate_dataset(dataset: Sequence[ObservationSet], config: TrainConfig) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    for obs in dataset:
        if obs.strategy is not config.strategy:
            raise StrategyMismatch(f"dataset is {obs.strategy.value}, config is {config.strategy.value}")
        if obs.in_channels != config.in_channels or obs.bands != config.bands:
            raise ShapeError(f"dataset has {obs.in_channels} input channels, config expects {config.in_channels}")
        if obs.height < config.patch_size or obs.width < config.patch_size:
            raise ShapeError(f"patch {config.patch_size} exceeds scene {obs.height}x{obs.width}")
        if config.cloud and obs.mask is None:
            raise ShapeError("cloud mode needs a mask on every scene")


def write_loss_log(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def train(config: TrainConfig, dataset: Sequence[ObservationSet], out_dir=None,
          state: Optional[TrainState] = None) -> tuple[TrainState, list[dict]]:
    """Run ``config.steps`` steps (continuing ``state`` if given).

    With ``out_dir``, ``checkpoint/`` is rewritten every
    ``checkpoint_interval`` steps and at the end, and ``losses.csv`` holds
    one row per step. On divergence the last good checkpoint is kept and
    the log is written up to the failing step before re-raising.
    """
    _validate_dataset(dataset, config)
    state = state or init_state(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, out / "checkpoint")
    rows: list[dict] = []
    first = state.step
    try:
        for step in range(first + 1, first + config.steps + 1):
            _, losses = train_step(state, sample_batch(dataset, config, step))
            rows.append(losses)
            if step % 50 == 0:
                log.info("step %d  L_G %.4f  L_con %.4f  L_DF %.4f  L_DB %.4f",
                         step, losses["L_G"], losses["L_con"], losses["L_DF"], losses["L_DB"])
            if out is not None and config.checkpoint_interval and step % config.checkpoint_interval == 0:
                save_checkpoint(state, out / "checkpoint")
    finally:
        if out is not None:
            write_loss_log(rows, out / "losses.csv")
    if out is not None:
        save_checkpoint(state, out / "checkpoint")
    return state, rows


# --------------------------------------------------------------- inference

def fuse(checkpoint, observations: ObservationSet) -> RasterImage:
    """Forward generator in inference mode (BN running statistics)."""
    state = checkpoint if isinstance(checkpoint, TrainState) else load_checkpoint(checkpoint)
    if observations.strategy is not state.strategy:
        raise StrategyMismatch(f"checkpoint was trained for {state.strategy.value}, "
                               f"observations are {observations.strategy.value}")
    x = _stack([observations.inputs()])
    state.g_f.eval()
    with torch.no_grad():
        out = state.g_f(x)[0].numpy()
    return RasterImage(np.clip(out, -1.0, 1.0), Kind.MS, ValueRange.UNIT_SIGNED)


# ------------------------------------------------------------- checkpoints

def state_tensors(state: TrainState) -> dict[str, Tensor]:
    """Every tensor of the state under stable names (nets, then optimizer moments)."""
    tensors: dict[str, Tensor] = {}
    for prefix, net in state.nets().items():
        tensors.update(named_tensors(prefix, net))
    for opt_name, (opt, owners) in state.optimizers().items():
        for owner in owners:
            net = state.nets()[owner]
            for pname, p in net.named_parameters():
                st = opt.state.get(p)
                if not st:
                    continue
                base = f"{opt_name}/" + stable_name(owner, pname)
                tensors[base + "/exp_avg"] = st["exp_avg"]
                tensors[base + "/exp_avg_sq"] = st["exp_avg_sq"]
    return tensors


def _adam_steps(state: TrainState) -> dict[str, int]:
    out = {}
    for opt_name, (opt, _) in state.optimizers().items():
        steps = {int(st["step"]) for st in opt.state.values() if "step" in st}
        out[opt_name] = steps.pop() if steps else 0
    return out


def save_checkpoint(state: TrainState, path) -> None:
    """Write ``manifest.json`` + ``params.bin`` (float32 LE) to directory ``path``.

    The directory is replaced atomically so an interrupted write never
    clobbers the previous checkpoint.
    """
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, t in state_tensors(state).items():
        data = t.detach().cpu().numpy().astype("<f4", copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(t.shape), "dtype": "f32le", "offset": offset,
                        "length": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": "hetfuse-checkpoint",
        "version": 1,
        "strategy": state.strategy.value,
        "step": state.step,
        "adam_steps": _adam_steps(state),
        "config": state.config.to_dict(),
        "tensors": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent))
    (tmp / "params.bin").write_bytes(b"".join(blobs))
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "params.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint at {path}: {exc}") from None
    if manifest.get("format") != "hetfuse-checkpoint":
        raise FormatError("not a hetfuse checkpoint")
    config = TrainConfig.from_dict(manifest["config"])
    if config.strategy.value != manifest.get("strategy"):
        raise FormatError("manifest strategy disagrees with its config")
    state = init_state(config)
    state.step = int(manifest["step"])

    entries = manifest["tensors"]
    expected_end = 0
    for e in entries:
        if e.get("dtype") != "f32le":
            raise FormatError(f"{e['name']}: unsupported dtype {e.get('dtype')}")
        if e["offset"] != expected_end or e["length"] != 4 * math.prod(e["shape"]):
            raise FormatError(f"{e['name']}: offset/length inconsistent with shape")
        expected_end += e["length"]
    if expected_end != len(blob):
        raise FormatError(f"params.bin has {len(blob)} bytes, manifest describes {expected_end}")
    values = {e["name"]: torch.from_numpy(
        np.frombuffer(blob, dtype="<f4", count=e["length"] // 4, offset=e["offset"]).astype(np.float32)
        .reshape(e["shape"])) for e in entries}

    live = {}
    for prefix, net in state.nets().items():
        live.update(named_tensors(prefix, net))
    missing = set(live) - set(values)
    if missing:
        raise FormatError(f"checkpoint lacks {sorted(missing)[:3]}...")
    with torch.no_grad():
        for name, t in live.items():
            if tuple(t.shape) != tuple(values[name].shape):
                raise FormatError(f"{name}: shape {tuple(values[name].shape)} != {tuple(t.shape)}")
            t.copy_(values[name])

    adam_steps = manifest.get("adam_steps", {})
    used = set(live)
    for opt_name, (opt, owners) in state.optimizers().items():
        for owner in owners:
            for pname, p in state.nets()[owner].named_parameters():
                base = f"{opt_name}/" + stable_name(owner, pname)
                if base + "/exp_avg" not in values:
                    continue
                opt.state[p] = {
                    "step": torch.tensor(float(adam_steps.get(opt_name, 0))),
                    "exp_avg": values[base + "/exp_avg"].clone(),
                    "exp_avg_sq": values[base + "/exp_avg_sq"].clone(),
                }
                used.update((base + "/exp_avg", base + "/exp_avg_sq"))
    extra = set(values) - used
    if extra:
        raise FormatError(f"checkpoint has unknown tensors {sorted(extra)[:3]}...")
    return state


def parameter_hashes(state: TrainState) -> dict[str, str]:
    """SHA-256 per network over parameters and BN running statistics."""
    out = {}
    for prefix, net in state.nets().items():
        h = hashlib.sha256()
        for name, t in sorted(named_tensors(prefix, net).items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().astype("<f4").tobytes())
        out[prefix] = h.hexdigest()
    return out

