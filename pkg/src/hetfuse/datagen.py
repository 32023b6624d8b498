"""Synthetic multi-sensor scene simulator.

A scene is a land-cover class partition with per-class spectral
signatures plus band-correlated texture (the t1 HR MS truth). From it we
derive:

* an earlier HR MS image through a per-band affine map, with a fraction
  of the area switched to different land cover (abrupt change);
* a SAR-like image: a fixed positive band mixing passed through an
  exponential, multiplied by gamma speckle and mapped to log scale;
* the LR MS observation via :mod:`hetfuse.degrade`, optionally clouded.

The SAR proxy is synthetic; it only guarantees that the radar channel
carries the HR structure of the t1 land cover.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from hetfuse.degrade import CloudSpec, SpatialDegradeSpec, apply_cloud_mask, bicubic_upsample, spatial_degrade
from hetfuse.errors import ConfigError, PatchTooLarge, ShapeError, StrategyMismatch
from hetfuse.imagery import Kind, NormStats, RasterImage, concat_channels, normalize, read_raster, write_raster
from hetfuse.strategy import FusionStrategy

# reflectance in [0, 1] -> [-1, 1]
MS_STATS_OFFSET = 0.5
MS_STATS_SCALE = 0.5
SAR_GAIN = 10.0
SAR_CONCENTRATION = 0.5
MIN_SEPARATION = 0.2
TEXTURE_AMPLITUDE = 0.04
SIGNATURE_RANGE = (0.1, 0.75)

# sub-stream tags for np.random.default_rng([seed, tag])
_CLASSES, _SIGNATURES, _TEXTURE, _TEMPORAL, _CHANGE, _SAR, _SPECKLE, _CLOUD = range(8)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    bands: int = 3
    sar_bands: int = 2
    n_classes: int = 5
    change_fraction: float = 0.2
    temporal_gain: Optional[tuple[float, ...]] = None
    temporal_bias: Optional[tuple[float, ...]] = None
    speckle_looks: int = 16
    cloud_fraction: float = 0.0
    ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.temporal_gain is not None:
            object.__setattr__(self, "temporal_gain", tuple(float(v) for v in self.temporal_gain))
        if self.temporal_bias is not None:
            object.__setattr__(self, "temporal_bias", tuple(float(v) for v in self.temporal_bias))
        self.validate()

    def validate(self) -> None:
        for name in ("height", "width", "bands", "sar_bands", "n_classes", "speckle_looks", "ratio"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        for name in ("change_fraction", "cloud_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {v}")
        block = 4 * self.ratio
        if self.height % block or self.width % block:
            raise ConfigError("height", f"scene size must be a multiple of 4*ratio = {block}")
        for name in ("temporal_gain", "temporal_bias"):
            v = getattr(self, name)
            if v is not None and len(v) != self.bands:
                raise ConfigError(name, f"needs {self.bands} values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, tag])

    def gains_biases(self) -> tuple[np.ndarray, np.ndarray]:
        rng = self.rng(_TEMPORAL)
        gain = rng.uniform(0.85, 1.15, self.bands)
        bias = rng.uniform(-0.05, 0.05, self.bands)
        if self.temporal_gain is not None:
            gain = np.asarray(self.temporal_gain)
        if self.temporal_bias is not None:
            bias = np.asarray(self.temporal_bias)
        return gain, bias


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    return gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")


def _blob_sigma(shape) -> float:
    return max(shape) / 16


def _top_fraction(field_: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean mask selecting exactly round(fraction * size) largest values."""
    k = int(round(fraction * field_.size))
    mask = np.zeros(field_.size, dtype=bool)
    if k:
        mask[np.argsort(field_, axis=None, kind="stable")[-k:]] = True
    return mask.reshape(field_.shape)


def sar_weights(spec: SceneSpec) -> np.ndarray:
    """(sar_bands, bands) positive mixing weights, rows summing to one."""
    return spec.rng(_SAR).dirichlet([SAR_CONCENTRATION] * spec.bands, spec.sar_bands)


def class_signatures(spec: SceneSpec, max_tries: int = 2000) -> np.ndarray:
    """(n_classes, bands) reflectance signatures.

    Candidates are rejected until every pair differs by at least
    ``MIN_SEPARATION`` in some optical band and in some SAR mixing, so
    that class boundaries are visible to both sensors.
    """
    rng = spec.rng(_SIGNATURES)
    w = sar_weights(spec)
    sig: list[np.ndarray] = []
    for _ in range(spec.n_classes):
        for _ in range(max_tries):
            cand = rng.uniform(*SIGNATURE_RANGE, spec.bands)
            if all(np.abs(cand - s).max() >= MIN_SEPARATION
                   and np.abs(w @ (cand - s)).max() >= MIN_SEPARATION for s in sig):
                break
        sig.append(cand)
    return np.array(sig)


def generate_scene(spec: SceneSpec) -> tuple[RasterImage, np.ndarray]:
    """Returns (t1 HR MS reflectance image [RAW], integer class map)."""
    shape = spec.shape
    rng = spec.rng(_CLASSES)
    if spec.n_classes == 1:
        class_map = np.zeros(shape, dtype=np.int64)
    else:
        fields = np.stack([_smooth_field(rng, shape, _blob_sigma(shape)) for _ in range(spec.n_classes)])
        class_map = fields.argmax(axis=0)
    sig = class_signatures(spec)
    trng = spec.rng(_TEXTURE)
    texture = _smooth_field(trng, shape, 1.0)
    texture /= texture.std() + 1e-12
    band_amp = TEXTURE_AMPLITUDE * trng.uniform(0.7, 1.3, spec.bands)
    x = sig[class_map].transpose(2, 0, 1) + band_amp[:, None, None] * texture
    return RasterImage(np.clip(x, 0.0, 1.0), Kind.MS), class_map


def temporal_counterpart(x_t1: RasterImage, class_map: np.ndarray,
                         spec: SceneSpec) -> tuple[RasterImage, np.ndarray]:
    """Earlier-date HR MS image and the boolean mask of changed pixels."""
    gain, bias = spec.gains_biases()
    x = x_t1.data.astype(np.float64)
    changed = np.zeros(class_map.shape, dtype=bool)
    if spec.change_fraction > 0:
        crng = spec.rng(_CHANGE)
        changed = _top_fraction(_smooth_field(crng, class_map.shape, _blob_sigma(class_map.shape)),
                                spec.change_fraction)
        old_sig = crng.uniform(*SIGNATURE_RANGE, (spec.n_classes, spec.bands))
        x = x.copy()
        for c in np.unique(class_map[changed]):
            sel = changed & (class_map == c)
            cur = x[:, class_map == c].mean(axis=1)
            x[:, sel] += (old_sig[c] - cur)[:, None]
    z = gain[:, None, None] * x + bias[:, None, None]
    return RasterImage(z, Kind.MS), changed


def sar_intensity(x_t1: RasterImage, spec: SceneSpec) -> np.ndarray:
    """Noiseless radar intensity: exp of a fixed positive band mixing."""
    mix = np.einsum("kb,bhw->khw", sar_weights(spec), x_t1.data.astype(np.float64))
    return np.exp(SAR_GAIN * mix)


def apply_speckle(intensity: np.ndarray, looks: int, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative gamma speckle with unit mean and variance 1/looks."""
    return intensity * rng.gamma(shape=looks, scale=1.0 / looks, size=intensity.shape)


def sar_proxy(x_t1: RasterImage, spec: SceneSpec) -> RasterImage:
    speckled = apply_speckle(sar_intensity(x_t1, spec), spec.speckle_looks, spec.rng(_SPECKLE))
    log_i = np.log(speckled)
    lo = np.percentile(log_i.reshape(spec.sar_bands, -1), 1, axis=1)
    hi = np.percentile(log_i.reshape(spec.sar_bands, -1), 99, axis=1)
    half = np.where(hi > lo, (hi - lo) / 2, 1.0)
    stats = NormStats(tuple((hi + lo) / 2), tuple(half))
    return normalize(RasterImage(log_i, Kind.SAR), stats)


def make_cloud_mask(shape: tuple[int, int], cloud_fraction: float, seed: int) -> RasterImage:
    if not 0.0 <= cloud_fraction <= 1.0:
        raise ConfigError("cloud_fraction", f"must lie in [0, 1], got {cloud_fraction}")
    rng = np.random.default_rng([seed, _CLOUD])
    blobs = _smooth_field(rng, shape, max(shape) / 10)
    return RasterImage(_top_fraction(blobs, cloud_fraction).astype(np.float32)[None], Kind.MASK)


def ms_stats(bands: int) -> NormStats:
    return NormStats.uniform(MS_STATS_OFFSET, MS_STATS_SCALE, bands)


@dataclass(frozen=True, eq=False)
class Scene:
    """Normalized ground truth and full-resolution observations of one scene."""

    label: RasterImage
    y: RasterImage
    z: RasterImage
    class_map: np.ndarray
    change_mask: np.ndarray
    cloud_mask: Optional[RasterImage] = None


def simulate_scene(spec: SceneSpec) -> Scene:
    x_raw, class_map = generate_scene(spec)
    z_raw, changed = temporal_counterpart(x_raw, class_map, spec)
    stats = ms_stats(spec.bands)
    cloud = make_cloud_mask(spec.shape, spec.cloud_fraction, spec.seed) if spec.cloud_fraction > 0 else None
    return Scene(label=normalize(x_raw, stats), y=sar_proxy(x_raw, spec), z=normalize(z_raw, stats),
                 class_map=class_map, change_mask=changed, cloud_mask=cloud)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """One sample: HR-sized inputs, optional label and optional cloud mask."""

    x_tilde_up: RasterImage
    strategy: FusionStrategy = FusionStrategy.HSST
    y: Optional[RasterImage] = None
    z: Optional[RasterImage] = None
    label: Optional[RasterImage] = None
    mask: Optional[RasterImage] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", FusionStrategy.parse(self.strategy))
        s = self.strategy
        if s.uses_sar != (self.y is not None) or s.uses_temporal != (self.z is not None):
            raise StrategyMismatch(f"members do not match strategy {s.value}")
        hw = (self.x_tilde_up.height, self.x_tilde_up.width)
        for name in ("y", "z", "label", "mask"):
            img = getattr(self, name)
            if img is not None and (img.height, img.width) != hw:
                raise ShapeError(f"member {name} is {img.height}x{img.width}, expected {hw[0]}x{hw[1]}")

    @property
    def height(self) -> int:
        return self.x_tilde_up.height

    @property
    def width(self) -> int:
        return self.x_tilde_up.width

    @property
    def bands(self) -> int:
        return self.x_tilde_up.bands

    def member(self, name: str) -> RasterImage:
        return self.x_tilde_up if name == "x_hat" else getattr(self, name)

    def inputs(self) -> RasterImage:
        """Forward-generator input: (X_hat, Y, Z) channels, absent members omitted."""
        return concat_channels([self.member(m) for m in self.strategy.members])

    @property
    def in_channels(self) -> int:
        return sum(self.member(m).bands for m in self.strategy.members)

    def with_strategy(self, strategy) -> ObservationSet:
        """Prune to a strategy's members; the source must carry them."""
        strategy = FusionStrategy.parse(strategy)
        y = self.y if strategy.uses_sar else None
        z = self.z if strategy.uses_temporal else None
        if (strategy.uses_sar and y is None) or (strategy.uses_temporal and z is None):
            raise StrategyMismatch(f"observation lacks members for strategy {strategy.value}")
        return replace(self, strategy=strategy, y=y, z=z)

    def crop(self, top: int, left: int, size: int) -> ObservationSet:
        def c(img):
            return None if img is None else img.crop(top, left, size, size)
        return ObservationSet(c(self.x_tilde_up), self.strategy, c(self.y), c(self.z), c(self.label), c(self.mask))


def make_observation_set(scene: Scene, strategy, degrade_spec: SpatialDegradeSpec,
                         cloud: Optional[CloudSpec] = None) -> ObservationSet:
    strategy = FusionStrategy.parse(strategy)
    x_hat = bicubic_upsample(spatial_degrade(scene.label, degrade_spec), degrade_spec.ratio)
    if cloud is not None:
        x_hat = apply_cloud_mask(x_hat, cloud)
    return ObservationSet(
        x_tilde_up=x_hat,
        strategy=strategy,
        y=scene.y if strategy.uses_sar else None,
        z=scene.z if strategy.uses_temporal else None,
        label=scene.label,
        mask=cloud.mask if cloud is not None else None,
    )


def sample_patches(obs: ObservationSet, patch_size: int, count: int, seed: int) -> list[ObservationSet]:
    """``count`` congruent square crops at uniformly random positions (with replacement)."""
    if patch_size % 4 or patch_size < 4:
        raise ValueError(f"patch_size must be a positive multiple of 4, got {patch_size}")
    if patch_size > obs.height or patch_size > obs.width:
        raise PatchTooLarge(f"patch {patch_size} exceeds scene {obs.height}x{obs.width}")
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, obs.height - patch_size + 1, count)
    lefts = rng.integers(0, obs.width - patch_size + 1, count)
    return [obs.crop(int(t), int(l), patch_size) for t, l in zip(tops, lefts)]


# ---------------------------------------------------------------- dataset I/O

MEMBER_FILES = {"label": "x.birf", "x_tilde_up": "x_tilde_up.birf", "y": "y.birf",
                "z": "z.birf", "mask": "mask.birf"}


@dataclass
class DatasetMeta:
    scene: dict
    degrade: dict
    strategy: str = "hsst"
    fill_value: float = 1.0
    n_scenes: int = 1
    seeds: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def simulate_dataset(spec: SceneSpec, degrade_spec: SpatialDegradeSpec, n_scenes: int = 1,
                     fill_value: float = 1.0) -> list[ObservationSet]:
    """Full (HSST) observation sets for ``n_scenes`` scenes with seeds seed, seed+1, ..."""
    out = []
    for k in range(n_scenes):
        scene = simulate_scene(replace(spec, seed=spec.seed + k))
        cloud = CloudSpec(scene.cloud_mask, fill_value) if scene.cloud_mask is not None else None
        out.append(make_observation_set(scene, FusionStrategy.HSST, degrade_spec, cloud))
    return out


def dataset_meta(spec: SceneSpec, degrade_spec: SpatialDegradeSpec, n_scenes: int = 1,
                 fill_value: float = 1.0) -> DatasetMeta:
    return DatasetMeta(scene=asdict(spec), degrade={"ratio": degrade_spec.ratio, "blur_sigma": degrade_spec.sigma},
                       strategy=FusionStrategy.HSST.value, fill_value=fill_value, n_scenes=n_scenes,
                       seeds=[spec.seed + k for k in range(n_scenes)])


def save_dataset(path, observations: Sequence[ObservationSet], meta: DatasetMeta) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for k, obs in enumerate(observations):
        d = root / f"scene_{k}"
        d.mkdir(exist_ok=True)
        mask = obs.mask
        if mask is None:
            mask = RasterImage(np.zeros((1, obs.height, obs.width), np.float32), Kind.MASK)
        for name, fname in MEMBER_FILES.items():
            img = mask if name == "mask" else getattr(obs, name)
            if img is None:
                raise StrategyMismatch(f"dataset scenes need every member; {name} is missing")
            write_raster(img, d / fname)
    (root / "meta.json").write_text(meta.to_json() + "\n")


def load_meta(path) -> dict:
    return json.loads((Path(path) / "meta.json").read_text())


def load_scene_dir(path, strategy) -> ObservationSet:
    d = Path(path)
    imgs = {name: read_raster(d / fname) for name, fname in MEMBER_FILES.items()}
    mask = imgs["mask"] if imgs["mask"].data.any() else None
    full = ObservationSet(imgs["x_tilde_up"], FusionStrategy.HSST, imgs["y"], imgs["z"], imgs["label"], mask)
    return full.with_strategy(strategy)


def load_dataset(path, strategy=None) -> list[ObservationSet]:
    root = Path(path)
    meta = load_meta(root)
    strategy = FusionStrategy.parse(strategy or meta.get("strategy", "hsst"))
    dirs = sorted((p for p in root.glob("scene_*") if p.is_dir()), key=lambda p: int(p.name.split("_")[1]))
    return [load_scene_dir(d, strategy) for d in dirs]
