"""Handcrafted anatomical features from prostate/fascia label masks.

Fascia thickness is read along 360 one-degree rays cast from the prostate
centroid of an axial slice. Each ray reports the length of the first
contiguous fascia run met at or beyond the prostate boundary; twelve 30
degree sectors summarise the rays by their median. Volumes are voxel counts
times voxel volume over the twelve selected slices.

Ray samples live on a fixed-point grid (``FRAC_BITS`` fractional bits per
voxel) and the mask is read by integer bilinear interpolation thresholded
at one half. Sample positions, interpolation weights and the threshold test
are exact integer arithmetic, so a 90 degree rotation of the mask permutes
the rays exactly and an integer translation leaves every reading unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from edmri.errors import EmptyStructureError, GeometryError
from edmri.preprocess import select_slices
from edmri.volume import (
    FASCIA,
    PROSTATE,
    MaskVolume,
    Slice2D,
    centroid_sums,
    extract_slice,
)

N_RAYS = 360
N_SECTORS = 12
RAYS_PER_SECTOR = N_RAYS // N_SECTORS
FRAC_BITS = 20
_ONE = 1 << FRAC_BITS
_MARGIN_VOXELS = 2


@dataclass(frozen=True)
class RadialProfile:
    z_index: int
    origin: Tuple[float, float]
    thickness_mm: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thickness_mm, dtype=float)
        if t.shape != (N_RAYS,) or not np.isfinite(t).all() or (t < 0).any():
            raise ValueError("a radial profile holds 360 finite, non-negative thicknesses")
        t.setflags(write=False)
        object.__setattr__(self, "thickness_mm", t)


@dataclass(frozen=True)
class SectorFeatures:
    z_index: int
    medians_mm: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.medians_mm, dtype=float)
        if m.shape != (N_SECTORS,):
            raise ValueError("sector features hold exactly 12 medians")
        m.setflags(write=False)
        object.__setattr__(self, "medians_mm", m)


@dataclass(frozen=True)
class MultiSliceFeatures:
    sectors: Tuple[SectorFeatures, ...]
    empty_slices: Tuple[int, ...] = ()

    @property
    def values(self):
        return np.concatenate([s.medians_mm for s in self.sectors])


@dataclass(frozen=True)
class VolumeFeatures:
    prostate_ml: float
    fascia_ml: float
    n_slices_used: int


# --------------------------------------------------------------------------- geometry helpers


def _unit_directions():
    """(cos, sin) for 0..359 degrees, built from the first quadrant so that
    the entry for ``a + 90`` is exactly the 90 degree rotation of ``a``."""
    rad = np.deg2rad(np.arange(90))
    c, s = np.cos(rad), np.sin(rad)
    c[0], s[0] = 1.0, 0.0
    dx = np.concatenate([c, -s, -c, s])
    dy = np.concatenate([s, c, -s, -c])
    return dx, dy


_DX, _DY = _unit_directions()


def _round_div(num: int, den: int) -> int:
    """Round ``num / den`` to the nearest integer, ties to even."""
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2 == 1):
        q += 1
    return q


def _fixed_centroid(prostate: np.ndarray) -> Tuple[int, int]:
    n, sx, sy = centroid_sums(prostate)
    return _round_div(sx * _ONE, n), _round_div(sy * _ONE, n)


def _to_fixed(coord: float) -> int:
    return int(np.rint(float(coord) * _ONE))


def _labels_from(prostate_bin, fascia_bin):
    p = np.asarray(prostate_bin.values if isinstance(prostate_bin, Slice2D) else prostate_bin, dtype=bool)
    f = np.asarray(fascia_bin.values if isinstance(fascia_bin, Slice2D) else fascia_bin, dtype=bool)
    if p.shape != f.shape or p.ndim != 2:
        raise ValueError(f"prostate and fascia masks must be matching 2-D arrays, got {p.shape}, {f.shape}")
    labels = np.zeros(p.shape, dtype=np.uint8)
    labels[f] = FASCIA
    labels[p] = PROSTATE
    return labels


def _spacing_of(slc, spacing_mm):
    if spacing_mm is not None:
        return tuple(float(s) for s in spacing_mm)
    if isinstance(slc, Slice2D):
        return slc.spacing_mm
    raise ValueError("spacing_mm is required when passing bare arrays")


def default_step_mm(spacing_mm) -> float:
    return 0.05 * min(spacing_mm[0], spacing_mm[1])


def _n_steps(labels, origin_fixed, spacing, step_mm):
    xs, ys = np.nonzero(labels)
    dx = (xs.astype(np.int64) * _ONE - origin_fixed[0]).astype(np.float64) * spacing[0] / _ONE
    dy = (ys.astype(np.int64) * _ONE - origin_fixed[1]).astype(np.float64) * spacing[1] / _ONE
    reach = math.sqrt(float(np.max(dx * dx + dy * dy))) + _MARGIN_VOXELS * max(spacing)
    return int(math.ceil(reach / step_mm))


def _inside(labels, px, py):
    """Integer bilinear indicator of prostate and fascia at fixed-point positions.

    A point is inside a structure when its interpolated membership is at
    least one half; both tests can hold on a shared boundary.
    """
    nx, ny = labels.shape
    ix, fx = px >> FRAC_BITS, px & (_ONE - 1)
    iy, fy = py >> FRAC_BITS, py & (_ONE - 1)
    wx = (_ONE - fx, fx)
    wy = (_ONE - fy, fy)
    acc_p = np.zeros(px.shape, dtype=np.int64)
    acc_f = np.zeros(px.shape, dtype=np.int64)
    for ox in (0, 1):
        cx = ix + ox
        okx = (cx >= 0) & (cx < nx)
        cxc = np.clip(cx, 0, nx - 1)
        for oy in (0, 1):
            cy = iy + oy
            ok = okx & (cy >= 0) & (cy < ny)
            lab = np.where(ok, labels[cxc, np.clip(cy, 0, ny - 1)], 0)
            w = wx[ox] * wy[oy]
            acc_p += np.where(lab == PROSTATE, w, 0)
            acc_f += np.where(lab == FASCIA, w, 0)
    half = 1 << (2 * FRAC_BITS - 1)
    return acc_p >= half, acc_f >= half


def _march(labels, origin_fixed, dir_x, dir_y, spacing, step_mm, n_steps):
    """Thickness (mm) along each direction; returns one value per direction."""
    t_mm = np.arange(n_steps + 1, dtype=np.float64)[:, None] * step_mm
    ux = np.rint(t_mm * dir_x[None, :] / spacing[0] * _ONE).astype(np.int64)
    uy = np.rint(t_mm * dir_y[None, :] / spacing[1] * _ONE).astype(np.int64)
    inside_p, inside_f = _inside(labels, origin_fixed[0] + ux, origin_fixed[1] + uy)
    if not inside_p[0].all():
        raise GeometryError("ray origin lies outside the prostate")
    n = n_steps + 1
    out = np.zeros(dir_x.shape[0])
    for r in range(dir_x.shape[0]):
        p, f = inside_p[:, r], inside_f[:, r]
        outside = np.flatnonzero(~p)
        if outside.size == 0:
            continue
        start = max(outside[0] - 1, 0)
        hits = np.flatnonzero(f[start:])
        if hits.size == 0:
            continue
        first = start + hits[0]
        gaps = np.flatnonzero(~f[first:])
        end = first + gaps[0] if gaps.size else n
        out[r] = (end - first) * step_mm
    return out


# --------------------------------------------------------------------------- public API


def ray_thickness(prostate_bin, fascia_bin, origin, angle_deg, step_mm=None, spacing_mm=None) -> float:
    """Fascia thickness (mm) along one ray from ``origin`` (voxel coordinates).

    Angle 0 points along +x and angles grow from +x towards +y.
    """
    if not 0 <= angle_deg < 360:
        raise ValueError(f"angle must lie in [0, 360), got {angle_deg}")
    spacing = _spacing_of(prostate_bin, spacing_mm)
    step_mm = default_step_mm(spacing) if step_mm is None else float(step_mm)
    if not step_mm > 0:
        raise ValueError("step_mm must be positive")
    labels = _labels_from(prostate_bin, fascia_bin)
    if float(angle_deg).is_integer():
        a = int(angle_deg)
        dx, dy = _DX[a:a + 1], _DY[a:a + 1]
    else:
        rad = math.radians(angle_deg)
        dx, dy = np.array([math.cos(rad)]), np.array([math.sin(rad)])
    origin_fixed = (_to_fixed(origin[0]), _to_fixed(origin[1]))
    n_steps = _n_steps(labels, origin_fixed, spacing, step_mm)
    return float(_march(labels, origin_fixed, dx, dy, spacing, step_mm, n_steps)[0])


def _profile_from_labels(labels, spacing, z_index, origin=None, step_mm=None):
    step_mm = default_step_mm(spacing) if step_mm is None else float(step_mm)
    if origin is None:
        origin_fixed = _fixed_centroid(labels == PROSTATE)
    else:
        origin_fixed = (_to_fixed(origin[0]), _to_fixed(origin[1]))
    n_steps = _n_steps(labels, origin_fixed, spacing, step_mm)
    thickness = _march(labels, origin_fixed, _DX, _DY, spacing, step_mm, n_steps)
    return RadialProfile(z_index, (origin_fixed[0] / _ONE, origin_fixed[1] / _ONE), thickness)


def radial_profile(prostate_bin, fascia_bin, origin=None, step_mm=None, spacing_mm=None) -> RadialProfile:
    """Thickness on the 360 one-degree rays; ``origin`` defaults to the prostate centroid."""
    spacing = _spacing_of(prostate_bin, spacing_mm)
    z = prostate_bin.z_index if isinstance(prostate_bin, Slice2D) else 0
    labels = _labels_from(prostate_bin, fascia_bin)
    if origin is None and not (labels == PROSTATE).any():
        raise EmptyStructureError("slice contains no prostate pixels")
    return _profile_from_labels(labels, spacing, z, origin, step_mm)


def sector_medians(profile: RadialProfile) -> SectorFeatures:
    per_sector = np.asarray(profile.thickness_mm).reshape(N_SECTORS, RAYS_PER_SECTOR)
    return SectorFeatures(profile.z_index, np.median(per_sector, axis=1))


def slice_sector_features(mask: MaskVolume, z: int, step_mm=None) -> SectorFeatures:
    slc = extract_slice(mask, z)
    labels = np.asarray(slc.values)
    if not (labels == PROSTATE).any():
        raise EmptyStructureError(f"slice z={z} contains no prostate pixels")
    return sector_medians(_profile_from_labels(labels, slc.spacing_mm, z, step_mm=step_mm))


def single_slice_features(mask: MaskVolume, step_mm=None) -> SectorFeatures:
    (z,) = select_slices(mask, "single_mid").indices
    return slice_sector_features(mask, z, step_mm)


def multi_slice_features(mask: MaskVolume, step_mm=None) -> MultiSliceFeatures:
    """Sector medians on the twelve consecutive slices around mid-gland, base first.

    Slices inside the prostate's z-range that carry no prostate pixels give
    twelve zeros and are listed in ``empty_slices``.
    """
    indices = select_slices(mask, "all12").indices
    cache, sectors, empty = {}, [], []
    for z in indices:
        if z not in cache:
            try:
                cache[z] = slice_sector_features(mask, z, step_mm)
            except EmptyStructureError:
                cache[z] = SectorFeatures(z, np.zeros(N_SECTORS))
                empty.append(z)
                warnings.warn(f"slice z={z} has no prostate pixels; using zero thickness", RuntimeWarning)
        sectors.append(cache[z])
    return MultiSliceFeatures(tuple(sectors), tuple(empty))


def volume_features(mask: MaskVolume) -> VolumeFeatures:
    """Prostate and fascia volumes (ml) over the distinct slices of the twelve-slice set."""
    indices = sorted(set(select_slices(mask, "all12").indices))
    sub = mask.labels[:, :, indices]
    voxel_ml = float(np.prod(mask.spacing_mm)) / 1000.0
    n_p = int(np.count_nonzero(sub == PROSTATE))
    n_f = int(np.count_nonzero(sub == FASCIA))
    return VolumeFeatures(n_p * voxel_ml, n_f * voxel_ml, len(indices))


# --------------------------------------------------------------------------- tabular view

FEATURE_MODES = ("mid", "multi", "volume", "all")


def feature_names(mode: str) -> List[str]:
    if mode == "mid":
        return [f"thick_mid_r{k}" for k in range(1, N_SECTORS + 1)]
    if mode == "multi":
        return [f"thick_s{s}_r{k}" for s in range(1, 13) for k in range(1, N_SECTORS + 1)]
    if mode == "volume":
        return ["vol_prostate_ml", "vol_fascia_ml"]
    if mode == "all":
        return feature_names("mid") + feature_names("multi") + feature_names("volume")
    raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")


def extract_features(mask: MaskVolume, mode: str = "all", step_mm=None) -> np.ndarray:
    parts = []
    if mode in ("mid", "all"):
        parts.append(single_slice_features(mask, step_mm).medians_mm)
    if mode in ("multi", "all"):
        parts.append(multi_slice_features(mask, step_mm).values)
    if mode in ("volume", "all"):
        v = volume_features(mask)
        parts.append(np.array([v.prostate_ml, v.fascia_ml]))
    if not parts:
        raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")
    return np.concatenate(parts)


class AnatomyFeatureExtractor(TransformerMixin, BaseEstimator):
    """Maps a sequence of ``MaskVolume`` objects to a feature matrix.

    Stateless; ``fit`` only records the output column names.
    """

    def __init__(self, mode="mid", step_mm=None):
        self.mode = mode
        self.step_mm = step_mm

    def fit(self, X, y=None):
        self.feature_names_out_ = np.asarray(feature_names(self.mode), dtype=object)
        return self

    def transform(self, X):
        names = feature_names(self.mode)
        rows = [extract_features(m, self.mode, self.step_mm) for m in X]
        return np.asarray(rows, dtype=float).reshape(len(rows), len(names))

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_names(self.mode), dtype=object)
