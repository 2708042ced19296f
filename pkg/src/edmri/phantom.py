"""Synthetic cohorts with analytically known anatomy and a planted outcome.

Each patient is a stack of axial slices holding a disk-shaped prostate
wrapped by a fascia band whose radial width ``w(z, theta)`` follows a
closed-form schedule, so every thickness and volume feature has an exact
reference value. Clinical records are drawn from fixed ranges and the
binary outcome (1 = good erectile function) follows a logistic model:

    logit p = WIDTH_COEF * (mean_width - WIDTH_CENTER) - AGE_COEF * (age - AGE_CENTER)

where ``mean_width`` is the mean analytic fascia width over the 360 rays of
the mid-gland slice. Thicker fascia raises and older age lowers the
probability of good function. ``signal`` selects which terms are active.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

import numpy as np

from edmri.errors import GeometryError
from edmri.ingest import (
    ClinicalRecord,
    OutcomeLabel,
    write_clinical_csv,
    write_labels_csv,
    write_mvol,
)
from edmri.volume import BACKGROUND, FASCIA, PROSTATE, MaskVolume, Volume3D

FASCIA_SHAPES = ("constant", "elliptic", "asymmetric", "half_ring")
RADIUS_PROFILES = ("cylinder", "ellipsoid")
SIGNALS = ("strong", "imaging", "clinical", "none")

WIDTH_CENTER = 3.0
AGE_CENTER = 63.0
# (width coefficient per mm, age coefficient per year) for each signal mode
SIGNAL_COEFS = {
    "strong": (3.0, 0.05),
    "imaging": (3.0, 0.0),
    "clinical": (0.0, 0.3),
    "none": (0.0, 0.0),
}

_INTENSITY = {BACKGROUND: 80.0, PROSTATE: 220.0, FASCIA: 140.0}
_ANGLES = np.arange(360)
_MARGIN_PX = 4


@dataclass(frozen=True)
class PhantomSpec:
    n_patients: int = 10
    dims: Tuple[int, int, int] = (512, 512, 24)
    spacing_mm: Tuple[float, float, float] = (0.273, 0.273, 2.368)
    radius_mm: Tuple[float, float] = (13.0, 17.0)
    radius_profile: str = "cylinder"
    fascia_shape: str = "asymmetric"
    width_mm: Tuple[float, float] = (3.0, 0.75)
    width_bounds_mm: Tuple[float, float] = (1.0, 5.5)
    asymmetry: float = 0.4
    taper: float = 0.0
    prostate_slices: Tuple[int, int] = (12, 16)
    center_jitter_px: int = 8
    noise_sigma: float = 10.0
    signal: str = "strong"
    missing_rate: float = 0.0
    with_image: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("dims", "spacing_mm", "radius_mm", "width_mm", "width_bounds_mm", "prostate_slices"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if self.fascia_shape not in FASCIA_SHAPES:
            raise ValueError(f"fascia_shape must be one of {FASCIA_SHAPES}")
        if self.radius_profile not in RADIUS_PROFILES:
            raise ValueError(f"radius_profile must be one of {RADIUS_PROFILES}")
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if not 0 < self.radius_mm[0] <= self.radius_mm[1]:
            raise ValueError("radius range must be positive and ordered")
        if self.width_bounds_mm[0] < 0 or self.width_bounds_mm[0] > self.width_bounds_mm[1]:
            raise ValueError("width bounds must be non-negative and ordered")
        if not 0 <= self.asymmetry < 1 or not 0 <= self.taper < 1:
            raise ValueError("asymmetry and taper must lie in [0, 1)")
        lo, hi = self.prostate_slices
        if not 1 <= lo <= hi:
            raise ValueError("prostate slice span range must satisfy 1 <= lo <= hi")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class PhantomTruth:
    patient_id: str
    center_px: Tuple[int, int]
    z_range: Tuple[int, int]
    radius_mm: List[float]
    base_width_mm: float
    mean_width_mm: float
    mid_slice: int
    slices12: List[int]
    sector_widths_mid: List[float]
    sector_widths_12: List[List[float]]
    voxel_counts: Dict[str, int]
    voxel_counts_12: Dict[str, int]
    volumes_ml: Dict[str, float]
    age: float
    probability: float
    label: int

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------- analytic geometry


def radius_schedule(spec: PhantomSpec, r0: float, z0: int, z1: int) -> Dict[int, float]:
    if spec.radius_profile == "cylinder" or z0 == z1:
        return {z: r0 for z in range(z0, z1 + 1)}
    half = (z1 - z0) / 2.0 + 0.5
    mid = (z0 + z1) / 2.0
    return {
        z: r0 * math.sqrt(max(0.25, 1.0 - ((z - mid) / half) ** 2)) for z in range(z0, z1 + 1)
    }


def taper_factor(spec: PhantomSpec, z: int, z0: int, z1: int) -> float:
    """Width multiplier, 1 at the base (lowest z) falling linearly to ``1 - taper`` at the apex."""
    if z1 == z0:
        return 1.0
    return 1.0 - spec.taper * (z - z0) / (z1 - z0)


def fascia_width(spec: PhantomSpec, radius: float, base_width: float, theta_deg) -> np.ndarray:
    """Radial fascia width (mm) at polar angle(s) ``theta_deg`` around the centre."""
    theta = np.deg2rad(np.asarray(theta_deg, dtype=float))
    a = spec.asymmetry
    if spec.fascia_shape == "constant":
        return np.full(theta.shape, base_width)
    if spec.fascia_shape == "asymmetric":
        return base_width * (1.0 + a * np.sin(theta))
    if spec.fascia_shape == "half_ring":
        deg = np.mod(np.asarray(theta_deg, dtype=float), 360.0)
        return np.where(deg < 180.0, base_width, 0.0)
    semi_x = radius + base_width * (1.0 + a)
    semi_y = radius + base_width * (1.0 - a)
    rho = semi_x * semi_y / np.sqrt((semi_y * np.cos(theta)) ** 2 + (semi_x * np.sin(theta)) ** 2)
    return rho - radius


def analytic_sector_widths(spec, radius, base_width) -> np.ndarray:
    w = fascia_width(spec, radius, base_width, _ANGLES)
    return np.median(w.reshape(12, 30), axis=1)


def analytic_fascia_area_mm2(spec, radius, base_width, n=36000) -> float:
    theta = (np.arange(n) + 0.5) * 360.0 / n
    outer = radius + fascia_width(spec, radius, base_width, theta)
    return float(0.5 * np.mean(outer ** 2 - radius ** 2) * 2 * math.pi)


def _all12(z0, z1):
    zm = (z0 + z1) // 2
    return [min(max(z, z0), z1) for z in range(zm - 5, zm + 7)]


def _rasterize(spec, shape_xy, center, radius, base_width):
    """Label one slice: prostate where rho < r, fascia where r <= rho < r + w(theta)."""
    nx, ny = shape_xy
    sx, sy = spec.spacing_mm[:2]
    dx = (np.arange(nx) - center[0]) * sx
    dy = (np.arange(ny) - center[1]) * sy
    X, Y = np.meshgrid(dx, dy, indexing="ij")
    rho = np.sqrt(X * X + Y * Y)
    theta = np.mod(np.degrees(np.arctan2(Y, X)), 360.0)
    labels = np.zeros((nx, ny), dtype=np.uint8)
    labels[(rho >= radius) & (rho < radius + fascia_width(spec, radius, base_width, theta))] = FASCIA
    labels[rho < radius] = PROSTATE
    return labels


# --------------------------------------------------------------------------- patients


def patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _sample_clinical(rng, patient_id, missing_rate):
    age = round(float(np.clip(rng.normal(63.0, 7.0), 45.0, 80.0)), 1)
    smoking = str(rng.choice(["never", "former", "current"], p=[0.5, 0.35, 0.15]))
    alcohol = "yes" if rng.random() < 0.7 else "no"
    values = dict(
        age=age,
        height_cm=round(float(np.clip(rng.normal(178.0, 7.0), 155.0, 205.0)), 1),
        weight_kg=round(float(np.clip(rng.normal(84.0, 12.0), 55.0, 140.0)), 1),
        smoking_status=smoking,
        smoking_freq=round(float(np.clip(rng.normal(12.0, 6.0), 1.0, 40.0)), 1) if smoking == "current" else 0.0,
        alcohol_use=alcohol,
        alcohol_units_week=round(float(np.clip(rng.normal(8.0, 5.0), 1.0, 40.0)), 1) if alcohol == "yes" else 0.0,
        medication="yes" if rng.random() < 0.4 else "no",
        comorbidities="yes" if rng.random() < 0.3 else "no",
        preop_iief_q1=int(rng.choice([4, 5], p=[0.3, 0.7])),
    )
    drop = rng.random(len(values)) < missing_rate
    for name, gone in zip(list(values), drop):
        if gone:
            values[name] = None
    return ClinicalRecord(patient_id, **values), age


def outcome_probability(signal: str, mean_width: float, age: float) -> float:
    width_coef, age_coef = SIGNAL_COEFS[signal]
    logit = width_coef * (mean_width - WIDTH_CENTER) - age_coef * (age - AGE_CENTER)
    return float(1.0 / (1.0 + math.exp(-logit)))


def generate_patient(spec: PhantomSpec, rng: np.random.Generator, patient_id: str = "P0000"):
    """Draw one patient.

    Returns ``(image or None, mask, clinical record, outcome label, truth)``;
    the image is omitted when ``spec.with_image`` is false.
    """
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing_mm
    r0 = float(rng.uniform(*spec.radius_mm))
    w_mean, w_sd = spec.width_mm
    base_width = float(np.clip(rng.normal(w_mean, w_sd), *spec.width_bounds_mm))
    span = int(rng.integers(spec.prostate_slices[0], spec.prostate_slices[1] + 1))
    span = min(span, nz)
    z0 = int(rng.integers(0, nz - span + 1))
    z1 = z0 + span - 1
    j = spec.center_jitter_px
    center = (nx // 2 + int(rng.integers(-j, j + 1)), ny // 2 + int(rng.integers(-j, j + 1)))

    radii = radius_schedule(spec, r0, z0, z1)
    widths = {z: base_width * taper_factor(spec, z, z0, z1) for z in radii}
    reach_mm = max(
        radii[z] + float(fascia_width(spec, radii[z], widths[z], _ANGLES).max()) for z in radii
    )
    half_window = int(math.ceil(reach_mm / min(sx, sy))) + _MARGIN_PX
    if (
        center[0] - half_window < 0 or center[0] + half_window >= nx
        or center[1] - half_window < 0 or center[1] + half_window >= ny
    ):
        raise GeometryError(
            f"{patient_id}: anatomy of radius {reach_mm:.1f} mm does not fit in dims {spec.dims}"
        )

    labels = np.zeros(spec.dims, dtype=np.uint8)
    win = (slice(center[0] - half_window, center[0] + half_window + 1),
           slice(center[1] - half_window, center[1] + half_window + 1))
    local_center = (half_window, half_window)
    for z in radii:
        labels[win[0], win[1], z] = _rasterize(
            spec, (2 * half_window + 1, 2 * half_window + 1), local_center, radii[z], widths[z]
        )
    mask = MaskVolume(labels, spec.spacing_mm)

    zm = (z0 + z1) // 2
    slices12 = _all12(z0, z1)
    distinct = sorted(set(slices12))
    sub = labels[:, :, distinct]
    mean_width = float(np.mean(fascia_width(spec, radii[zm], widths[zm], _ANGLES)))

    record, age = _sample_clinical(rng, patient_id, spec.missing_rate)
    p = outcome_probability(spec.signal, mean_width, age)
    binary = int(rng.random() < p)
    score = int(rng.choice([4, 5])) if binary else int(rng.integers(0, 4))
    outcome = OutcomeLabel(patient_id, score)

    image = None
    if spec.with_image:
        lut = np.array([_INTENSITY[BACKGROUND], _INTENSITY[PROSTATE], _INTENSITY[FASCIA]], dtype=np.float32)
        xs = np.linspace(0.0, math.pi, nx, dtype=np.float32)
        ys = np.linspace(0.0, math.pi, ny, dtype=np.float32)
        bias = 10.0 * np.sin(xs)[:, None, None] * np.sin(ys)[None, :, None]
        data = lut[labels] + bias + rng.normal(0.0, spec.noise_sigma, size=spec.dims).astype(np.float32)
        image = Volume3D(data, spec.spacing_mm)

    truth = PhantomTruth(
        patient_id=patient_id,
        center_px=center,
        z_range=(z0, z1),
        radius_mm=[radii[z] for z in range(z0, z1 + 1)],
        base_width_mm=base_width,
        mean_width_mm=mean_width,
        mid_slice=zm,
        slices12=slices12,
        sector_widths_mid=analytic_sector_widths(spec, radii[zm], widths[zm]).tolist(),
        sector_widths_12=[analytic_sector_widths(spec, radii[z], widths[z]).tolist() for z in slices12],
        voxel_counts={
            "prostate": int(np.count_nonzero(labels == PROSTATE)),
            "fascia": int(np.count_nonzero(labels == FASCIA)),
        },
        voxel_counts_12={
            "prostate": int(np.count_nonzero(sub == PROSTATE)),
            "fascia": int(np.count_nonzero(sub == FASCIA)),
        },
        volumes_ml={
            "prostate": sum(math.pi * radii[z] ** 2 for z in distinct) * sz / 1000.0,
            "fascia": sum(analytic_fascia_area_mm2(spec, radii[z], widths[z]) for z in distinct) * sz / 1000.0,
        },
        age=age,
        probability=p,
        label=binary,
    )
    return image, mask, record, outcome, truth


def patient_id_for(index: int) -> str:
    return f"P{index:04d}"


def iter_cohort(spec: PhantomSpec) -> Iterator[tuple]:
    """Yield patients one at a time; patient ``i`` uses its own derived RNG stream."""
    for i in range(spec.n_patients):
        yield generate_patient(spec, patient_rng(spec.seed, i), patient_id_for(i))


def _rounded(obj, digits=9):
    if isinstance(obj, float):
        return round(obj, digits)
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, digits) for v in obj]
    return obj


def truth_document(spec: PhantomSpec, truths: List[PhantomTruth]) -> dict:
    return {
        "spec": spec.to_dict(),
        "outcome_model": {
            "width_center_mm": WIDTH_CENTER,
            "age_center_years": AGE_CENTER,
            "width_coef_per_mm": SIGNAL_COEFS[spec.signal][0],
            "age_coef_per_year": SIGNAL_COEFS[spec.signal][1],
        },
        "patients": [_rounded(t.to_dict()) for t in truths],
    }


def generate_cohort(spec: PhantomSpec, out_dir) -> Path:
    """Write a dataset directory::

        volumes/<id>.mvol  masks/<id>.mvol  clinical.csv  labels.csv  truth.json
    """
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    if spec.with_image:
        (out / "volumes").mkdir(exist_ok=True)
    records, labels, truths = [], [], []
    for image, mask, record, outcome, truth in iter_cohort(spec):
        write_mvol(mask, out / "masks" / f"{truth.patient_id}.mvol")
        if image is not None:
            write_mvol(image, out / "volumes" / f"{truth.patient_id}.mvol")
        records.append(record)
        labels.append(outcome)
        truths.append(truth)
    write_clinical_csv(records, out / "clinical.csv")
    write_labels_csv(labels, out / "labels.csv")
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth_document(spec, truths), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def load_truth(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
