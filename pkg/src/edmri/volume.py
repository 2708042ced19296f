"""Voxel-grid value types and the small set of operations every other module
builds on.

Arrays are indexed ``data[x, y, z]``; flattening for storage uses x-fastest
(Fortran) order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from edmri.errors import EmptyStructureError, InvalidLabelError

BACKGROUND, PROSTATE, FASCIA = 0, 1, 2
LABELS = (BACKGROUND, PROSTATE, FASCIA)


def _as_spacing(spacing, n):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != n:
        raise ValueError(f"expected {n} spacing components, got {len(spacing)}")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be positive and finite, got {spacing}")
    return spacing


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _check_labels(labels):
    bad = ~np.isin(labels, LABELS)
    if bad.any():
        values = sorted(set(np.unique(labels[bad]).tolist()))
        raise InvalidLabelError(f"mask labels must be in {{0,1,2}}, found {values}")


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar intensity grid with physical voxel spacing in millimetres."""

    data: np.ndarray
    spacing_mm: Tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume intensities must be finite")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing_mm", _as_spacing(self.spacing_mm, 3))

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data, spacing_mm=None):
        return Volume3D(data, self.spacing_mm if spacing_mm is None else spacing_mm)


@dataclass(frozen=True, eq=False)
class MaskVolume:
    """Per-voxel label codes: 0 background, 1 prostate, 2 fascia."""

    labels: np.ndarray
    spacing_mm: Tuple[float, float, float]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"mask must be a non-empty 3-D array, got shape {labels.shape}")
        _check_labels(labels)
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))
        object.__setattr__(self, "spacing_mm", _as_spacing(self.spacing_mm, 3))

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)

    def with_labels(self, labels, spacing_mm=None):
        return MaskVolume(labels, self.spacing_mm if spacing_mm is None else spacing_mm)


@dataclass(frozen=True, eq=False)
class Slice2D:
    """One axial plane of a volume or mask.

    ``is_mask`` tells whether ``values`` holds label codes (or a binary
    component of them) rather than intensities.
    """

    values: np.ndarray
    spacing_mm: Tuple[float, float]
    z_index: int
    is_mask: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"slice must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "spacing_mm", _as_spacing(self.spacing_mm, 2))
        object.__setattr__(self, "z_index", int(self.z_index))

    @property
    def dims(self):
        return tuple(int(n) for n in self.values.shape)


Grid = Union[Volume3D, MaskVolume]


def _grid_array(source):
    if isinstance(source, Volume3D):
        return source.data, False
    if isinstance(source, MaskVolume):
        return source.labels, True
    raise TypeError(f"expected Volume3D or MaskVolume, got {type(source).__name__}")


def extract_slice(source: Grid, z: int) -> Slice2D:
    arr, is_mask = _grid_array(source)
    nz = arr.shape[2]
    if not 0 <= z < nz:
        raise IndexError(f"slice index z={z} out of range for nz={nz}")
    return Slice2D(arr[:, :, z], source.spacing_mm[:2], z, is_mask=is_mask)


def stack_slices(slices, spacing_mm, is_mask=None):
    """Inverse of extracting every plane: rebuild a volume or mask from slices ordered by z."""
    slices = list(slices)
    if not slices:
        raise ValueError("need at least one slice")
    arr = np.stack([s.values for s in slices], axis=2)
    if is_mask is None:
        is_mask = slices[0].is_mask
    return MaskVolume(arr, spacing_mm) if is_mask else Volume3D(arr, spacing_mm)


def binary_component(mask, label: int) -> np.ndarray:
    """Boolean array that is true exactly where the label code equals ``label``."""
    if label not in (PROSTATE, FASCIA):
        raise InvalidLabelError(f"label must be 1 (prostate) or 2 (fascia), got {label!r}")
    if isinstance(mask, MaskVolume):
        arr = mask.labels
    elif isinstance(mask, Slice2D):
        arr = mask.values
    else:
        arr = np.asarray(mask)
    return arr == label


def prostate_slice_range(mask: MaskVolume) -> Tuple[int, int]:
    present = np.flatnonzero((mask.labels == PROSTATE).any(axis=(0, 1)))
    if present.size == 0:
        raise EmptyStructureError("mask contains no prostate voxels")
    return int(present[0]), int(present[-1])


def centroid_sums(binary: np.ndarray):
    """Exact integer moments ``(count, sum_x, sum_y)`` of a 2-D boolean array."""
    xs, ys = np.nonzero(np.asarray(binary, dtype=bool))
    n = xs.size
    if n == 0:
        raise EmptyStructureError("cannot take the centroid of an empty structure")
    return int(n), int(xs.astype(np.int64).sum()), int(ys.astype(np.int64).sum())


def centroid(binary) -> Tuple[float, float]:
    """Mean (x, y) voxel coordinate of the true pixels, not snapped to the grid."""
    if isinstance(binary, Slice2D):
        binary = binary.values
    n, sx, sy = centroid_sums(binary)
    return sx / n, sy / n
