"""Readers and writers for volumes, masks, clinical records and outcome labels,
plus clinical imputation and outcome binarization."""

from __future__ import annotations

import csv
import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from edmri.errors import (
    FormatError,
    ImputationError,
    SizeMismatchError,
    UnsupportedFormatError,
)
from edmri.volume import MaskVolume, Volume3D

# --------------------------------------------------------------------------- mvol

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_CONTENT_FOR_DTYPE = {"f32": "image", "u8": "mask"}


def write_mvol(volume, path) -> None:
    if isinstance(volume, Volume3D):
        dtype, content, arr = "f32", "image", volume.data
    elif isinstance(volume, MaskVolume):
        dtype, content, arr = "u8", "mask", volume.labels
    else:
        raise TypeError(f"cannot write {type(volume).__name__} as mvol")
    header = {
        "dims": list(volume.dims),
        "spacing_mm": [float(s) for s in volume.spacing_mm],
        "dtype": dtype,
        "content": content,
    }
    payload = np.asarray(arr, dtype=_DTYPES[dtype]).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(payload)


def read_mvol_header(raw: bytes):
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("mvol header line is not newline-terminated")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed mvol header: {exc}") from None
    if not isinstance(header, dict) or not {"dims", "spacing_mm", "dtype", "content"} <= header.keys():
        raise FormatError("mvol header must contain dims, spacing_mm, dtype and content")
    dims, spacing = header["dims"], header["spacing_mm"]
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(n, int) and n > 0 for n in dims)
    ):
        raise FormatError(f"mvol dims must be three positive integers, got {dims!r}")
    if not isinstance(spacing, list) or len(spacing) != 3:
        raise FormatError(f"mvol spacing_mm must have three components, got {spacing!r}")
    dtype = header["dtype"]
    if dtype not in _DTYPES:
        raise UnsupportedFormatError(f"unknown mvol dtype {dtype!r} (expected 'f32' or 'u8')")
    if header["content"] != _CONTENT_FOR_DTYPE[dtype]:
        raise FormatError(f"dtype {dtype!r} requires content {_CONTENT_FOR_DTYPE[dtype]!r}")
    return header, nl + 1


def read_mvol(path):
    raw = Path(path).read_bytes()
    header, offset = read_mvol_header(raw)
    dims = tuple(header["dims"])
    dtype = _DTYPES[header["dtype"]]
    expected = int(np.prod(dims)) * dtype.itemsize
    got = len(raw) - offset
    if got != expected:
        raise SizeMismatchError(
            f"{path}: payload has {got} bytes, dims {list(dims)} need {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims, order="F")
    if header["content"] == "mask":
        return MaskVolume(arr, header["spacing_mm"])
    return Volume3D(arr.astype(np.float32), header["spacing_mm"])


# --------------------------------------------------------------------------- NIfTI-1

_NIFTI_DTYPES = {2: np.dtype("u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}


def read_nifti_subset(path, content: str = "image"):
    """Read an uncompressed little-endian single-file NIfTI-1 volume.

    Only uint8, int16 and float32 payloads are accepted, with no intensity
    scaling (``scl_slope`` 0 or 1, ``scl_inter`` 0). ``content`` selects
    whether the payload is returned as an image or a label mask.
    """
    if content not in ("image", "mask"):
        raise ValueError("content must be 'image' or 'mask'")
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raise UnsupportedFormatError(f"{path}: compressed NIfTI is not supported")
    if len(raw) < 348:
        raise UnsupportedFormatError(f"{path}: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != 348:
        raise UnsupportedFormatError(f"{path}: not a little-endian NIfTI-1 header")
    if raw[344:348] != b"n+1\x00":
        raise UnsupportedFormatError(f"{path}: bad NIfTI magic {raw[344:348]!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from("<3f", raw, 108)
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedFormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
    ndim = dim[0]
    if not 1 <= ndim <= 3 and not (ndim == 4 and dim[4] == 1):
        raise UnsupportedFormatError(f"{path}: only 3-D volumes are supported (ndim={ndim})")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        raise UnsupportedFormatError(f"{path}: intensity scaling is not supported")
    dims = tuple(max(1, int(dim[i])) if i <= ndim else 1 for i in (1, 2, 3))
    spacing = tuple(float(pixdim[i]) if i <= ndim and pixdim[i] > 0 else 1.0 for i in (1, 2, 3))
    dtype = _NIFTI_DTYPES[datatype]
    offset = int(vox_offset) if vox_offset >= 348 else 352
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - offset < expected:
        raise SizeMismatchError(f"{path}: payload shorter than dims {list(dims)} require")
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=offset)
    arr = arr.reshape(dims, order="F")
    if content == "mask":
        return MaskVolume(arr.astype(np.int64), spacing)
    return Volume3D(arr.astype(np.float32), spacing)


# --------------------------------------------------------------------------- clinical

CLINICAL_COLUMNS = (
    "patient_id",
    "age",
    "height_cm",
    "weight_kg",
    "smoking_status",
    "smoking_freq",
    "alcohol_use",
    "alcohol_units_week",
    "medication",
    "comorbidities",
    "preop_iief_q1",
)
LABEL_COLUMNS = ("patient_id", "iief_q1_12mo")

CATEGORIES = {
    "smoking_status": ("never", "former", "current"),
    "alcohol_use": ("no", "yes"),
    "medication": ("no", "yes"),
    "comorbidities": ("no", "yes"),
}
NUMERIC = ("age", "height_cm", "weight_kg", "smoking_freq", "alcohol_units_week", "preop_iief_q1")
_POSITIVE = ("age", "height_cm", "weight_kg")


@dataclass(frozen=True)
class ClinicalRecord:
    patient_id: str
    age: Optional[float] = None
    height_cm: Optional[float] = None
    weight_kg: Optional[float] = None
    smoking_status: Optional[str] = None
    smoking_freq: Optional[float] = None
    alcohol_use: Optional[str] = None
    alcohol_units_week: Optional[float] = None
    medication: Optional[str] = None
    comorbidities: Optional[str] = None
    preop_iief_q1: Optional[int] = None

    def __post_init__(self):
        for name in _POSITIVE:
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise FormatError(f"patient {self.patient_id}: {name} must be > 0, got {value}")
        for name, allowed in CATEGORIES.items():
            value = getattr(self, name)
            if value is not None and value not in allowed:
                raise FormatError(
                    f"patient {self.patient_id}: {name}={value!r} not in {list(allowed)}"
                )
        if self.preop_iief_q1 is not None and self.preop_iief_q1 not in range(6):
            raise FormatError(
                f"patient {self.patient_id}: preop_iief_q1 must be 0-5, got {self.preop_iief_q1}"
            )

    def missing(self):
        return [c for c in CLINICAL_COLUMNS[1:] if getattr(self, c) is None]


@dataclass(frozen=True)
class OutcomeLabel:
    patient_id: str
    iief_q1_12mo: int
    binary: int = -1

    def __post_init__(self):
        expected = binarize_outcome(self.iief_q1_12mo)
        if self.binary == -1:
            object.__setattr__(self, "binary", expected)
        elif self.binary != expected:
            raise FormatError(
                f"patient {self.patient_id}: binary label {self.binary} inconsistent "
                f"with score {self.iief_q1_12mo}"
            )


def binarize_outcome(score) -> int:
    """Good function (1) for IIEF-15 question 1 scores of 4 or 5, else 0."""
    if isinstance(score, bool) or int(score) != score or not 0 <= score <= 5:
        raise ValueError(f"IIEF question-1 score must be an integer 0-5, got {score!r}")
    return int(score >= 4)


def _check_header(header, expected, path):
    header = [h.strip() for h in header]
    unknown = [h for h in header if h not in expected]
    if unknown:
        raise FormatError(f"{path}: unknown column(s) {unknown}")
    missing = [c for c in expected if c not in header]
    if missing:
        raise FormatError(f"{path}: missing column(s) {missing}")
    if len(set(header)) != len(header):
        raise FormatError(f"{path}: duplicated column names")
    return header


def _parse_number(text, column, row_no, path, integer=False):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"{path}:{row_no}: non-numeric value {text!r} in column {column}") from None
    if not math.isfinite(value):
        raise FormatError(f"{path}:{row_no}: non-finite value in column {column}")
    if integer:
        if value != int(value):
            raise FormatError(f"{path}:{row_no}: column {column} must be an integer, got {text!r}")
        return int(value)
    return value


def _read_rows(path, expected):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        header = _check_header(header, expected, path)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{row_no}: expected {len(header)} cells, got {len(row)}")
            yield row_no, dict(zip(header, (cell.strip() for cell in row)))


def read_clinical_csv(path) -> List[ClinicalRecord]:
    records = []
    for row_no, row in _read_rows(path, CLINICAL_COLUMNS):
        values = {"patient_id": row["patient_id"]}
        for column in CLINICAL_COLUMNS[1:]:
            cell = row[column]
            if cell == "":
                values[column] = None
            elif column in NUMERIC:
                values[column] = _parse_number(
                    cell, column, row_no, path, integer=column == "preop_iief_q1"
                )
            else:
                values[column] = cell.lower()
        try:
            records.append(ClinicalRecord(**values))
        except FormatError as exc:
            raise FormatError(f"{path}:{row_no}: {exc}") from None
    return records


def read_labels_csv(path) -> List[OutcomeLabel]:
    labels = []
    for row_no, row in _read_rows(path, LABEL_COLUMNS):
        if row["iief_q1_12mo"] == "":
            raise FormatError(f"{path}:{row_no}: missing iief_q1_12mo")
        score = _parse_number(row["iief_q1_12mo"], "iief_q1_12mo", row_no, path, integer=True)
        if not 0 <= score <= 5:
            raise FormatError(f"{path}:{row_no}: iief_q1_12mo must be 0-5, got {score}")
        labels.append(OutcomeLabel(row["patient_id"], score))
    return labels


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(round(value, 6))
    return str(value)


def write_clinical_csv(records: Sequence[ClinicalRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CLINICAL_COLUMNS)
        for rec in records:
            writer.writerow([_format_cell(getattr(rec, c)) for c in CLINICAL_COLUMNS])


def write_labels_csv(labels: Sequence[OutcomeLabel], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_COLUMNS)
        for lab in labels:
            writer.writerow([lab.patient_id, lab.iief_q1_12mo])


# --------------------------------------------------------------------------- imputation


@dataclass
class ImputationSummary:
    fill_values: Dict[str, object] = field(default_factory=dict)
    filled_counts: Dict[str, int] = field(default_factory=dict)
    dropped_ids: List[str] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _mode(values):
    counts = Counter(values)
    best = max(counts.values())
    # ties resolve to the lexicographically smallest category
    return min(v for v, c in counts.items() if c == best)


def fit_fill_values(records: Sequence[ClinicalRecord], only_missing: bool = True):
    """Column means (numeric) and modes (categorical) over non-missing entries.

    With ``only_missing`` the fill value is computed just for columns that
    have a missing entry. A column that is missing everywhere raises.
    """
    fills = {}
    for column in CLINICAL_COLUMNS[1:]:
        present = [getattr(r, column) for r in records if getattr(r, column) is not None]
        if only_missing and len(present) == len(records):
            continue
        if not present:
            raise ImputationError(f"cannot impute column {column!r}: every value is missing")
        if column in NUMERIC:
            mean = float(np.mean(present))
            fills[column] = int(round(mean)) if column == "preop_iief_q1" else mean
        else:
            fills[column] = _mode(present)
    return fills


def impute_clinical(
    records: Sequence[ClinicalRecord], strict: bool = False
) -> Tuple[List[ClinicalRecord], ImputationSummary]:
    """Fill missing clinical values, or drop incomplete rows when ``strict``.

    Numeric columns get the mean of the observed values, categorical
    columns their mode. ``preop_iief_q1`` is an ordinal score, so its mean
    is rounded to the nearest valid score.
    """
    summary = ImputationSummary()
    if strict:
        kept = [rec for rec in records if not rec.missing()]
        summary.dropped_ids = [rec.patient_id for rec in records if rec.missing()]
        return kept, summary
    fills = fit_fill_values(records)
    summary.fill_values = dict(fills)
    completed = []
    for rec in records:
        updates = {c: fills[c] for c in rec.missing()}
        for c in updates:
            summary.filled_counts[c] = summary.filled_counts.get(c, 0) + 1
        completed.append(replace(rec, **updates) if updates else rec)
    return completed, summary


# --------------------------------------------------------------------------- encoding


def clinical_feature_names():
    names = []
    for column in CLINICAL_COLUMNS[1:]:
        if column == "smoking_status":
            names.extend(f"smoking_{c}" for c in CATEGORIES[column])
        else:
            names.append(column)
    return names


def encode_clinical(records: Sequence[ClinicalRecord]) -> np.ndarray:
    """Numeric design matrix for complete records.

    Smoking status is one-hot encoded; the yes/no categories become 0/1.
    """
    rows = []
    for rec in records:
        missing = rec.missing()
        if missing:
            raise ImputationError(f"patient {rec.patient_id}: missing {missing}; impute first")
        row = []
        for column in CLINICAL_COLUMNS[1:]:
            value = getattr(rec, column)
            if column == "smoking_status":
                row.extend(float(value == c) for c in CATEGORIES[column])
            elif column in CATEGORIES:
                row.append(float(value == "yes"))
            else:
                row.append(float(value))
        rows.append(row)
    return np.asarray(rows, dtype=float).reshape(len(rows), len(clinical_feature_names()))


class ClinicalEncoder(TransformerMixin, BaseEstimator):
    """Impute clinical records with fill values learned on the training rows,
    then encode them numerically."""

    def fit(self, records, y=None):
        self.fill_values_ = fit_fill_values(list(records), only_missing=False)
        self.feature_names_out_ = np.asarray(clinical_feature_names(), dtype=object)
        return self

    def transform(self, records):
        if not hasattr(self, "fill_values_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ClinicalEncoder is not fitted")
        completed = [
            replace(r, **{c: self.fill_values_[c] for c in r.missing()}) for r in records
        ]
        return encode_clinical(completed)

    def get_feature_names_out(self, input_features=None):
        return self.feature_names_out_


def records_by_id(items):
    out = {}
    for item in items:
        if item.patient_id in out:
            raise FormatError(f"duplicate patient_id {item.patient_id!r}")
        out[item.patient_id] = item
    return out


__all__ = [
    "CLINICAL_COLUMNS",
    "LABEL_COLUMNS",
    "ClinicalEncoder",
    "ClinicalRecord",
    "ImputationSummary",
    "OutcomeLabel",
    "binarize_outcome",
    "clinical_feature_names",
    "encode_clinical",
    "impute_clinical",
    "read_clinical_csv",
    "read_labels_csv",
    "read_mvol",
    "read_nifti_subset",
    "write_clinical_csv",
    "write_labels_csv",
    "write_mvol",
]
