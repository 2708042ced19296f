"""Image standardization chain (resample, clip, z-score, crop), slice
selection policies and in-plane augmentations."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from edmri.errors import DegenerateInputError
from edmri.volume import MaskVolume, Slice2D, Volume3D, prostate_slice_range

TARGET_SPACING_MM = (0.273, 0.273, 2.368)
CLIP_PERCENTILES = (0.5, 99.0)
CROP_HW = (512, 512)

POLICY_SIZES = {"single_mid": 1, "mid4": 4, "base_mid8": 8, "all12": 12}


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing_mm: Tuple[float, float, float] = TARGET_SPACING_MM
    clip_percentiles: Tuple[float, float] = CLIP_PERCENTILES
    crop_hw: Tuple[int, int] = CROP_HW
    image_interp: str = "trilinear"
    mask_interp: str = "nearest"

    def __post_init__(self):
        object.__setattr__(self, "target_spacing_mm", tuple(float(s) for s in self.target_spacing_mm))
        object.__setattr__(self, "clip_percentiles", tuple(float(p) for p in self.clip_percentiles))
        object.__setattr__(self, "crop_hw", tuple(int(n) for n in self.crop_hw))
        lo, hi = self.clip_percentiles
        if not 0 <= lo < hi <= 100:
            raise ValueError(f"clip percentiles must satisfy 0 <= low < high <= 100, got {(lo, hi)}")
        if len(self.target_spacing_mm) != 3 or not all(s > 0 for s in self.target_spacing_mm):
            raise ValueError(f"target spacing must be three positive values, got {self.target_spacing_mm}")
        if len(self.crop_hw) != 2 or not all(n > 0 and n % 2 == 0 for n in self.crop_hw):
            raise ValueError(f"crop dims must be positive and even, got {self.crop_hw}")
        if self.image_interp != "trilinear" or self.mask_interp != "nearest":
            raise ValueError("only trilinear image and nearest-neighbour mask interpolation are supported")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown preprocess config keys: {sorted(unknown)}")
        return cls(**data)


# --------------------------------------------------------------------------- resampling


def resample(source, target_spacing=TARGET_SPACING_MM):
    """Resample onto ``target_spacing`` (mm), trilinear for images and
    nearest-neighbour for masks.

    Voxel ``i`` covers ``[i*s, (i+1)*s)`` physically, so output voxel ``o``
    samples input coordinate ``(o + 0.5) * t / s - 0.5``.
    """
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or not all(t > 0 for t in target):
        raise ValueError(f"target spacing must be three positive values, got {target_spacing}")
    is_mask = isinstance(source, MaskVolume)
    arr = source.labels if is_mask else source.data
    spacing = source.spacing_mm
    if target == tuple(spacing):
        return source
    out_shape = tuple(
        max(1, int(round(n * s / t))) for n, s, t in zip(arr.shape, spacing, target)
    )
    ratio = np.array([t / s for s, t in zip(spacing, target)])
    offset = 0.5 * ratio - 0.5
    if is_mask:
        out = ndimage.affine_transform(
            arr, np.diag(ratio), offset=offset, output_shape=out_shape, order=0, mode="nearest"
        )
        return MaskVolume(out, target)
    out = ndimage.affine_transform(
        arr.astype(np.float64), np.diag(ratio), offset=offset, output_shape=out_shape, order=1, mode="nearest"
    )
    return Volume3D(out, target)


# --------------------------------------------------------------------------- intensities


def percentile_bounds(values, p_low=CLIP_PERCENTILES[0], p_high=CLIP_PERCENTILES[1]):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateInputError("cannot compute percentiles of an empty volume")
    if not 0 <= p_low < p_high <= 100:
        raise ValueError(f"percentiles must satisfy 0 <= low < high <= 100, got {(p_low, p_high)}")
    lo, hi = np.percentile(values, [p_low, p_high], method="linear")
    return float(lo), float(hi)


def clip_intensities(volume: Volume3D, p_low=CLIP_PERCENTILES[0], p_high=CLIP_PERCENTILES[1]):
    lo, hi = percentile_bounds(volume.data, p_low, p_high)
    return volume.with_data(np.clip(volume.data.astype(np.float64), lo, hi))


def zscore(volume: Volume3D):
    data = volume.data.astype(np.float64)
    std = data.std()
    if not std > 0:
        raise DegenerateInputError("zero-variance volume cannot be z-scored")
    return volume.with_data((data - data.mean()) / std)


# --------------------------------------------------------------------------- cropping


def _crop_pad_axis(arr, axis, size):
    n = arr.shape[axis]
    if n < size:
        before = (size - n) // 2
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (before, size - n - before)
        arr = np.pad(arr, pad, mode="constant", constant_values=0)
    elif n > size:
        start = (n - size) // 2
        arr = np.take(arr, np.arange(start, start + size), axis=axis)
    return arr


def center_crop(source, hw=CROP_HW):
    """Crop (or zero/background-pad, then crop) the in-plane dims to ``hw``."""
    h, w = (int(n) for n in hw)
    if isinstance(source, Volume3D):
        arr = source.data
    elif isinstance(source, MaskVolume):
        arr = source.labels
    elif isinstance(source, Slice2D):
        arr = source.values
    else:
        raise TypeError(f"cannot crop {type(source).__name__}")
    arr = _crop_pad_axis(_crop_pad_axis(arr, 0, h), 1, w)
    if isinstance(source, Volume3D):
        return source.with_data(arr)
    if isinstance(source, MaskVolume):
        return source.with_labels(arr)
    return Slice2D(arr, source.spacing_mm, source.z_index, is_mask=source.is_mask)


def preprocess_volume(volume: Volume3D, config: Optional[PreprocessConfig] = None) -> Volume3D:
    """resample -> clip -> z-score -> crop."""
    config = config or PreprocessConfig()
    out = resample(volume, config.target_spacing_mm)
    out = clip_intensities(out, *config.clip_percentiles)
    out = zscore(out)
    return center_crop(out, config.crop_hw)


def preprocess_mask(mask: MaskVolume, config: Optional[PreprocessConfig] = None) -> MaskVolume:
    config = config or PreprocessConfig()
    return center_crop(resample(mask, config.target_spacing_mm), config.crop_hw)


class VolumePreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer over lists of volumes and/or masks."""

    def __init__(self, target_spacing_mm=TARGET_SPACING_MM, clip_percentiles=CLIP_PERCENTILES,
                 crop_hw=CROP_HW):
        self.target_spacing_mm = target_spacing_mm
        self.clip_percentiles = clip_percentiles
        self.crop_hw = crop_hw

    def _config(self):
        return PreprocessConfig(self.target_spacing_mm, self.clip_percentiles, self.crop_hw)

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        config = self._config()
        return [
            preprocess_mask(item, config) if isinstance(item, MaskVolume)
            else preprocess_volume(item, config)
            for item in X
        ]


# --------------------------------------------------------------------------- slice selection


@dataclass(frozen=True)
class SliceSelection:
    policy: str
    indices: Tuple[int, ...]

    def __post_init__(self):
        if self.policy not in POLICY_SIZES:
            raise ValueError(f"unknown slice policy {self.policy!r}")
        if len(self.indices) != POLICY_SIZES[self.policy]:
            raise ValueError(f"policy {self.policy} needs {POLICY_SIZES[self.policy]} indices")


def select_slices(mask: MaskVolume, policy: str) -> SliceSelection:
    """Resolve a slice policy against the prostate's z-extent.

    When the gland spans fewer slices than the policy needs, indices are
    clamped into the span so the extreme slices repeat.
    """
    if policy not in POLICY_SIZES:
        raise ValueError(f"unknown slice policy {policy!r}; expected one of {list(POLICY_SIZES)}")
    z0, z1 = prostate_slice_range(mask)
    zm = (z0 + z1) // 2
    if policy == "single_mid":
        raw = [zm]
    elif policy == "mid4":
        raw = range(zm - 1, zm + 3)
    elif policy == "base_mid8":
        raw = range(z0, z0 + 8)
    else:
        raw = range(zm - 5, zm + 7)
    return SliceSelection(policy, tuple(int(min(max(z, z0), z1)) for z in raw))


# --------------------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    translate_px: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    gaussian_sigma: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.gaussian_sigma < 0:
            raise ValueError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")
        object.__setattr__(self, "translate_px", tuple(float(t) for t in self.translate_px))


@dataclass(frozen=True)
class AugmentRanges:
    rotation_deg: float = 15.0
    translate_px: float = 16.0
    scale: Tuple[float, float] = (0.9, 1.1)
    sigma: Tuple[float, float] = (0.0, 1.5)

    def sample(self, rng: np.random.Generator) -> AugmentParams:
        return AugmentParams(
            rotation_deg=float(rng.uniform(-self.rotation_deg, self.rotation_deg)),
            translate_px=tuple(rng.uniform(-self.translate_px, self.translate_px, size=2)),
            scale=float(rng.uniform(*self.scale)),
            gaussian_sigma=float(rng.uniform(*self.sigma)),
        )


def _integer_shift(arr, tx, ty):
    out = np.zeros_like(arr)
    nx, ny = arr.shape
    src_x = slice(max(0, -tx), min(nx, nx - tx))
    src_y = slice(max(0, -ty), min(ny, ny - ty))
    dst_x = slice(max(0, tx), min(nx, nx + tx))
    dst_y = slice(max(0, ty), min(ny, ny + ty))
    out[dst_x, dst_y] = arr[src_x, src_y]
    return out


def augment_slice(slc: Slice2D, params: AugmentParams) -> Slice2D:
    """Rotate (counter-clockwise in (x, y) index space), scale and translate a
    slice about its centre, then blur images.

    Right-angle rotations with integer shifts and unit scale are applied as
    exact pixel permutations. Masks use nearest-neighbour sampling and are
    never blurred.
    """
    arr = slc.values
    nx, ny = arr.shape
    tx, ty = params.translate_px
    quarter = params.rotation_deg / 90.0
    exact = (
        quarter == round(quarter)
        and (nx == ny or round(quarter) % 2 == 0)
        and params.scale == 1.0
        and tx == round(tx)
        and ty == round(ty)
    )
    if exact:
        out = np.rot90(arr, int(round(quarter)) % 4, axes=(0, 1))
        out = _integer_shift(out, int(round(tx)), int(round(ty)))
    else:
        theta = np.deg2rad(params.rotation_deg)
        c, s = np.cos(theta), np.sin(theta)
        # output -> input: p_in = centre + R(-theta) (p_out - centre - t) / scale
        inv = np.array([[c, s], [-s, c]]) / params.scale
        centre = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0])
        offset = centre - inv @ (centre + np.array([tx, ty]))
        order = 0 if slc.is_mask else 1
        out = ndimage.affine_transform(
            arr.astype(arr.dtype if slc.is_mask else np.float64),
            inv, offset=offset, output_shape=arr.shape, order=order, mode="constant", cval=0,
        )
    if not slc.is_mask and params.gaussian_sigma > 0:
        out = ndimage.gaussian_filter(out.astype(np.float64), params.gaussian_sigma, mode="nearest")
    return Slice2D(out.astype(arr.dtype, copy=False), slc.spacing_mm, slc.z_index, is_mask=slc.is_mask)


def random_augment(image: Slice2D, mask: Optional[Slice2D], rng: np.random.Generator,
                   ranges: AugmentRanges = AugmentRanges()):
    """Draw one parameter set from ``rng`` and apply it to an image and its mask."""
    params = ranges.sample(rng)
    image_out = augment_slice(image, params)
    mask_out = None if mask is None else augment_slice(mask, AugmentParams(
        params.rotation_deg, params.translate_px, params.scale, 0.0))
    return image_out, mask_out, params
