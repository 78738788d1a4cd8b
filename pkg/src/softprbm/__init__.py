"""Surrogate joint laws, meta-models and pseudo-rigid-body simulation of modular soft actuators."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ActuationKind,
    Condition,
    Curve3,
    ModuleDesign,
    NumericalError,
    SampleGrid,
    SampleRecord,
    SoftPrbmError,
    ValidationError,
    validate_design,
)
from .oracle import GroundTruthLaw, LawFamily, SampleSet, generate_samples, ingest_csv  # noqa: E402
from .polyfit import FitConfig, PolySurrogate, fit_poly_surrogate  # noqa: E402

__all__ = [
    "__version__",
    "ActuationKind",
    "Condition",
    "Curve3",
    "FitConfig",
    "GroundTruthLaw",
    "LawFamily",
    "ModuleDesign",
    "NumericalError",
    "PolySurrogate",
    "SampleGrid",
    "SampleRecord",
    "SampleSet",
    "SoftPrbmError",
    "ValidationError",
    "fit_poly_surrogate",
    "generate_samples",
    "ingest_csv",
    "validate_design",
]
