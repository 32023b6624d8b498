import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from hetfuse.datagen import (
    ObservationSet,
    SceneSpec,
    apply_speckle,
    dataset_meta,
    generate_scene,
    load_dataset,
    make_cloud_mask,
    make_observation_set,
    sample_patches,
    sar_proxy,
    save_dataset,
    simulate_dataset,
    simulate_scene,
    temporal_counterpart,
)
from hetfuse.degrade import CloudSpec, SpatialDegradeSpec
from hetfuse.errors import ConfigError, PatchTooLarge, ShapeError, StrategyMismatch
from hetfuse.imagery import Kind, RasterImage, ValueRange


def test_spec_validation_names_field():
    with pytest.raises(ConfigError) as err:
        SceneSpec(change_fraction=-0.1)
    assert err.value.field == "change_fraction"
    with pytest.raises(ConfigError):
        SceneSpec(height=60)  # not a multiple of 4 * ratio
    with pytest.raises(ConfigError):
        SceneSpec(speckle_looks=0)


def test_single_class_scene():
    x, cmap = generate_scene(SceneSpec(32, 32, n_classes=1, seed=3))
    assert np.all(cmap == 0)
    assert x.shape == (3, 32, 32) and x.kind is Kind.MS


def test_scene_determinism():
    a, b = simulate_scene(SceneSpec(seed=7)), simulate_scene(SceneSpec(seed=7))
    for name in ("label", "y", "z"):
        assert np.array_equal(getattr(a, name).data, getattr(b, name).data)
    assert not np.array_equal(a.label.data, simulate_scene(SceneSpec(seed=8)).label.data)


@pytest.mark.parametrize("n_classes", [2, 5, 8])
def test_class_coverage(n_classes):
    misses = sum(len(np.unique(generate_scene(SceneSpec(128, 128, n_classes=n_classes, seed=s))[1])) < n_classes
                 for s in range(100))
    assert misses <= 1


def test_no_change_identity_temporal():
    spec = SceneSpec(change_fraction=0.0, temporal_gain=(1, 1, 1), temporal_bias=(0, 0, 0), seed=2)
    x, cmap = generate_scene(spec)
    z, changed = temporal_counterpart(x, cmap, spec)
    assert not changed.any()
    assert np.array_equal(z.data, x.data)


def test_no_change_is_affine_per_band():
    spec = SceneSpec(change_fraction=0.0, seed=4)
    x, cmap = generate_scene(spec)
    z, _ = temporal_counterpart(x, cmap, spec)
    for b in range(3):
        a = np.stack([x.data[b].ravel().astype(np.float64), np.ones(x.height * x.width)], 1)
        coef, *_ = np.linalg.lstsq(a, z.data[b].ravel().astype(np.float64), rcond=None)
        assert np.abs(a @ coef - z.data[b].ravel()).max() < 1e-6  # float32 storage floor


@pytest.mark.parametrize("seed", range(5))
def test_change_area(seed):
    spec = SceneSpec(128, 128, change_fraction=0.3, seed=seed)
    x, cmap = generate_scene(spec)
    z, changed = temporal_counterpart(x, cmap, spec)
    assert abs(changed.sum() - 0.3 * 128 * 128) <= 0.05 * 0.3 * 128 * 128
    # unchanged pixels follow the affine model, changed ones do not
    gain, bias = spec.gains_biases()
    pred = gain[:, None, None] * x.data + bias[:, None, None]
    assert np.abs(z.data - pred)[:, ~changed].max() < 1e-6
    assert np.abs(z.data - pred)[:, changed].mean() > 0.02


@pytest.mark.parametrize("looks", [1, 16, 256])
def test_speckle_statistics(looks):
    rng = np.random.default_rng(looks)
    intensity = np.full(200_000, 3.0)
    ratio = apply_speckle(intensity, looks, rng) / intensity
    assert abs(ratio.mean() - 1) < 0.01
    assert abs(ratio.std() - 1 / np.sqrt(looks)) < 0.05 / np.sqrt(looks)


def test_sar_converges_to_noiseless_mixing():
    x, _ = generate_scene(SceneSpec(seed=1))
    devs = [np.abs(sar_proxy(x, SceneSpec(seed=1, speckle_looks=L)).data
                   - sar_proxy(x, SceneSpec(seed=1, speckle_looks=100_000)).data).mean()
            for L in (1, 16, 256)]
    assert devs[0] > devs[1] > devs[2]


def test_sar_shape_and_determinism():
    x, _ = generate_scene(SceneSpec(seed=5))
    y = sar_proxy(x, SceneSpec(seed=5))
    assert y.shape == (2, 64, 64) and y.kind is Kind.SAR and y.value_range is ValueRange.UNIT_SIGNED
    assert np.array_equal(y.data, sar_proxy(x, SceneSpec(seed=5)).data)


def boundary_ratio(y: np.ndarray, cmap: np.ndarray) -> float:
    gy, gx = np.gradient(y.astype(np.float64), axis=(1, 2))
    mag = np.sqrt((gy**2 + gx**2).sum(axis=0))
    edge = np.zeros(cmap.shape, bool)
    dv = cmap[1:] != cmap[:-1]
    dh = cmap[:, 1:] != cmap[:, :-1]
    edge[1:] |= dv
    edge[:-1] |= dv
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh
    return mag[edge].mean() / mag[~edge].mean()


@pytest.mark.parametrize("seed", range(20))
def test_sar_preserves_class_edges(seed):
    scene = simulate_scene(SceneSpec(seed=seed))
    assert boundary_ratio(scene.y.data, scene.class_map) >= 2


def test_observation_channels_by_strategy():
    scene = simulate_scene(SceneSpec(seed=0))
    ds = SpatialDegradeSpec(4)
    hsst = make_observation_set(scene, "hsst", ds)
    assert hsst.in_channels == 8 and hsst.inputs().bands == 8
    assert make_observation_set(scene, "st", ds).y is None
    assert make_observation_set(scene, "hss", ds).z is None
    with pytest.raises(StrategyMismatch):
        ObservationSet(hsst.x_tilde_up, "hss", y=None, z=scene.z, label=scene.label)


def test_identity_degradation_observation():
    scene = simulate_scene(SceneSpec(32, 32, ratio=1, seed=0))
    obs = make_observation_set(scene, "hsst", SpatialDegradeSpec(1, 0.0))
    assert np.array_equal(obs.x_tilde_up.data, obs.label.data)


def test_observation_size_mismatch():
    a, b = simulate_scene(SceneSpec(seed=0)), simulate_scene(SceneSpec(32, 32, seed=0))
    with pytest.raises(ShapeError):
        ObservationSet(a.label, "hss", y=b.y, label=a.label)


def test_cloud_mask_fractions():
    assert make_cloud_mask((64, 64), 0.0, 1).data.sum() == 0
    assert make_cloud_mask((64, 64), 1.0, 1).data.min() == 1
    for seed in range(5):
        m = make_cloud_mask((200, 160), 0.2315, seed)
        assert 0.2215 <= m.data.mean() <= 0.2415
    assert np.array_equal(make_cloud_mask((64, 64), 0.3, 9).data, make_cloud_mask((64, 64), 0.3, 9).data)


def test_cloud_observation_masks_inputs_only():
    spec = SceneSpec(seed=3, cloud_fraction=0.2)
    scene = simulate_scene(spec)
    obs = make_observation_set(scene, "hsst", SpatialDegradeSpec(4), CloudSpec(scene.cloud_mask, 1.0))
    m = scene.cloud_mask.data[0] == 1
    assert np.all(obs.x_tilde_up.data[:, m] == 1)
    assert not np.all(obs.label.data[:, m] == 1)


def test_sample_patches():
    obs = make_observation_set(simulate_scene(SceneSpec(seed=0)), "hsst", SpatialDegradeSpec(4))
    assert sample_patches(obs, 16, 0, 1) == []
    patches = sample_patches(obs, 16, 20, 1)
    for p in patches:
        # locate the crop through the label and check every member agrees
        hits = [(t, l) for t in range(49) for l in range(49)
                if np.array_equal(obs.label.data[:, t:t + 16, l:l + 16], p.label.data)]
        t, l = hits[0]
        for name in ("x_tilde_up", "y", "z"):
            assert np.array_equal(getattr(obs, name).data[:, t:t + 16, l:l + 16], getattr(p, name).data)
    again = sample_patches(obs, 16, 20, 1)
    assert all(np.array_equal(a.label.data, b.label.data) for a, b in zip(patches, again))
    with pytest.raises(PatchTooLarge):
        sample_patches(obs, 68, 1, 0)
    with pytest.raises(ValueError):
        sample_patches(obs, 10, 1, 0)


def test_full_scene_patch_request():
    def big(bands, kind=Kind.MS):
        return RasterImage(np.broadcast_to(np.float32(0.25), (bands, 6400, 5300)), kind)

    obs = ObservationSet(big(1), "hsst", y=big(1, Kind.SAR), z=big(1), label=big(1))
    patches = sample_patches(obs, 200, 1984, 0)
    assert len(patches) == 1984
    assert all(p.label.shape == (1, 200, 200) for p in patches[:10])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([4, 8, 16]))
def test_crop_congruence_property(seed, size):
    obs = make_observation_set(simulate_scene(SceneSpec(32, 32, seed=seed % 7)), "hsst", SpatialDegradeSpec(4))
    rng = np.random.default_rng(seed)
    t, l = rng.integers(0, 33 - size, 2)
    p = obs.crop(int(t), int(l), size)
    for name in ("x_tilde_up", "y", "z", "label"):
        assert np.array_equal(getattr(p, name).data, getattr(obs, name).data[:, t:t + size, l:l + size])


def test_dataset_round_trip(tmp_path):
    spec = SceneSpec(32, 32, seed=11, cloud_fraction=0.1)
    obs = simulate_dataset(spec, SpatialDegradeSpec(4), n_scenes=2)
    save_dataset(tmp_path, obs, dataset_meta(spec, SpatialDegradeSpec(4), n_scenes=2))
    assert sorted(p.name for p in (tmp_path / "scene_0").iterdir()) == \
        ["mask.birf", "x.birf", "x_tilde_up.birf", "y.birf", "z.birf"]
    assert (tmp_path / "meta.json").exists()
    back = load_dataset(tmp_path)
    assert len(back) == 2
    for a, b in zip(obs, back):
        for name in ("x_tilde_up", "y", "z", "label", "mask"):
            assert np.array_equal(getattr(a, name).data, getattr(b, name).data)
    st_only = load_dataset(tmp_path, "st")
    assert st_only[0].y is None and st_only[0].z is not None
