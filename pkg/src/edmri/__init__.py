"""Handcrafted prostate MRI features and clinical prediction pipeline for
post-prostatectomy erectile function outcomes."""

from edmri.errors import (
    DegenerateInputError,
    DivergenceError,
    EmptyStructureError,
    FormatError,
    GeometryError,
    ImputationError,
    InvalidLabelError,
    LeakageError,
    SizeMismatchError,
    UnsupportedFormatError,
)
from edmri.volume import MaskVolume, Slice2D, Volume3D

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "DivergenceError",
    "EmptyStructureError",
    "FormatError",
    "GeometryError",
    "ImputationError",
    "InvalidLabelError",
    "LeakageError",
    "MaskVolume",
    "SizeMismatchError",
    "Slice2D",
    "UnsupportedFormatError",
    "Volume3D",
    "__version__",
]
