import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edmri.errors import DegenerateInputError, EmptyStructureError
from edmri.preprocess import (
    AugmentParams, AugmentRanges, PreprocessConfig, VolumePreprocessor, augment_slice,
    center_crop, clip_intensities, percentile_bounds, preprocess_volume, random_augment,
    resample, select_slices, zscore,
)
from edmri.volume import MaskVolume, Slice2D, Volume3D


def test_resample_identity_returns_input(rng):
    vol = Volume3D(rng.normal(size=(4, 5, 3)), (0.273, 0.273, 2.368))
    assert resample(vol, (0.273, 0.273, 2.368)) is vol


@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.5, 4.0))
@settings(max_examples=25, deadline=None)
def test_resample_constant(sx, sy, sz):
    vol = Volume3D(np.full((6, 5, 4), 7.0), (sx, sy, sz))
    out = resample(vol, (1.0, 1.0, 1.0))
    assert np.allclose(out.data, 7.0, atol=1e-5)


def test_resample_linear_ramp():
    n = 20
    ramp = np.broadcast_to(np.arange(n, dtype=float)[:, None, None], (n, n, n))
    out = resample(Volume3D(ramp, (1.0, 1.0, 1.0)), (0.5, 0.5, 0.5))
    assert out.dims == (40, 40, 40)
    o = np.arange(40)
    expected = (o + 0.5) * 0.5 - 0.5
    inner = slice(2, 38)
    assert np.max(np.abs(out.data[inner, 5, 5] - expected[inner])) < 1e-5


def test_resample_mask_nearest():
    labels = np.zeros((4, 4, 2), dtype=np.uint8)
    labels[:2] = 1
    labels[2:] = 2
    out = resample(MaskVolume(labels, (1, 1, 1)), (0.5, 0.5, 1.0))
    assert set(np.unique(out.labels)) == {1, 2}
    assert np.all(out.labels[:4] == 1) and np.all(out.labels[4:] == 2)


def test_resample_bad_spacing():
    with pytest.raises(ValueError):
        resample(Volume3D(np.zeros((2, 2, 2)), (1, 1, 1)), (1, 0, 1))


def test_clip_examples():
    vals = np.arange(1, 101, dtype=float).reshape(10, 10, 1)
    vol = Volume3D(vals, (1, 1, 1))
    assert np.array_equal(clip_intensities(vol, 0, 100).data, vol.data)
    with_outlier = vals.copy()
    with_outlier[0, 0, 0] = 1e6
    out = clip_intensities(Volume3D(with_outlier, (1, 1, 1)), 0, 99)
    flat = np.sort(with_outlier.ravel())
    pos = 0.99 * (flat.size - 1)
    oracle = flat[int(pos)] + (pos - int(pos)) * (flat[int(pos) + 1] - flat[int(pos)])
    assert out.data[0, 0, 0] == np.float32(oracle)
    const = Volume3D(np.full((3, 3, 3), 4.0), (1, 1, 1))
    assert np.array_equal(clip_intensities(const).data, const.data)
    with pytest.raises(ValueError):
        percentile_bounds([1, 2], 50, 10)


def test_zscore_examples(rng):
    out = zscore(Volume3D(np.array([0.0, 2.0]).reshape(2, 1, 1), (1, 1, 1)))
    assert np.array_equal(out.data.ravel(), [-1.0, 1.0])
    std = zscore(Volume3D(rng.normal(size=(8, 8, 4)), (1, 1, 1)))
    again = zscore(std)
    assert np.max(np.abs(again.data - std.data)) < 1e-6
    with pytest.raises(DegenerateInputError):
        zscore(Volume3D(np.ones((2, 2, 2)), (1, 1, 1)))


def test_center_crop_examples(rng):
    a = rng.normal(size=(514, 514, 1))
    out = center_crop(Volume3D(a, (1, 1, 1)))
    assert np.array_equal(out.data, a[1:513, 1:513].astype(np.float32))
    same = Volume3D(rng.normal(size=(512, 512, 1)), (1, 1, 1))
    assert np.array_equal(center_crop(same).data, same.data)
    small = center_crop(Volume3D(np.ones((500, 500, 1)), (1, 1, 1)))
    assert small.dims == (512, 512, 1)
    assert small.data[:6].sum() == 0 and small.data[-6:].sum() == 0
    assert small.data[:, :6].sum() == 0 and small.data[:, -6:].sum() == 0
    assert np.all(small.data[6:506, 6:506] == 1)


def test_config_validation():
    with pytest.raises(ValueError):
        PreprocessConfig(clip_percentiles=(50, 10))
    with pytest.raises(ValueError):
        PreprocessConfig(crop_hw=(511, 512))
    cfg = PreprocessConfig.from_dict({"crop_hw": [64, 64]})
    assert PreprocessConfig.from_dict(cfg.to_dict()) == cfg


def test_pipeline_order_and_transformer(rng):
    vol = Volume3D(rng.normal(100, 20, size=(40, 40, 4)), (0.5, 0.5, 2.0))
    cfg = PreprocessConfig(target_spacing_mm=(0.5, 0.5, 2.0), crop_hw=(32, 32))
    out = preprocess_volume(vol, cfg)
    assert out.dims == (32, 32, 4)
    manual = center_crop(zscore(clip_intensities(vol)), (32, 32))
    assert np.array_equal(out.data, manual.data)
    t = VolumePreprocessor(target_spacing_mm=(0.5, 0.5, 2.0), crop_hw=(32, 32)).fit([vol])
    assert np.array_equal(t.transform([vol])[0].data, out.data)


def _mask_with_range(z0, z1, nz=24):
    labels = np.zeros((4, 4, nz), dtype=np.uint8)
    labels[1:3, 1:3, z0:z1 + 1] = 1
    return MaskVolume(labels, (1, 1, 1))


def test_select_slices_examples():
    assert select_slices(_mask_with_range(0, 23), "single_mid").indices == (11,)
    assert select_slices(_mask_with_range(4, 15), "all12").indices == tuple(range(4, 16))
    assert select_slices(_mask_with_range(5, 8), "mid4").indices == (5, 6, 7, 8)
    assert len(select_slices(_mask_with_range(3, 20), "base_mid8").indices) == 8
    with pytest.raises(EmptyStructureError):
        select_slices(MaskVolume(np.zeros((2, 2, 2)), (1, 1, 1)), "mid4")


@given(st.integers(0, 23), st.integers(0, 23), st.sampled_from(["single_mid", "mid4", "base_mid8", "all12"]))
@settings(max_examples=60, deadline=None)
def test_select_slices_within_range(a, b, policy):
    z0, z1 = min(a, b), max(a, b)
    idx = select_slices(_mask_with_range(z0, z1), policy).indices
    assert len(idx) == {"single_mid": 1, "mid4": 4, "base_mid8": 8, "all12": 12}[policy]
    assert all(z0 <= z <= z1 for z in idx)


def test_augment_identity_and_rotation(rng):
    img = Slice2D(rng.normal(size=(16, 16)), (1, 1), 0)
    assert np.array_equal(augment_slice(img, AugmentParams()).values, img.values)
    rot = augment_slice(img, AugmentParams(rotation_deg=90.0))
    assert np.array_equal(np.sort(rot.values.ravel()), np.sort(img.values.ravel()))
    assert np.array_equal(rot.values, np.rot90(img.values, 1, axes=(0, 1)))


def test_augment_blur_constant_and_mask_labels(rng):
    const = Slice2D(np.full((20, 20), 3.0), (1, 1), 0)
    out = augment_slice(const, AugmentParams(gaussian_sigma=1.5))
    assert np.allclose(out.values, 3.0)
    mask = Slice2D(rng.integers(0, 3, size=(20, 20)).astype(np.uint8), (1, 1), 0, is_mask=True)
    img_out, mask_out, params = random_augment(const, mask, rng, AugmentRanges())
    assert set(np.unique(mask_out.values)) <= {0, 1, 2}
    with pytest.raises(ValueError):
        AugmentParams(scale=0.0)
