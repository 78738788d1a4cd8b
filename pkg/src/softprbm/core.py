"""Shared domain types, sampling grids and numeric conventions.

Units are fixed per field and never carried at runtime:
lengths in mm, pressure in kPa, forces in N, moments in N*m, angles in rad.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

DESIGN_FIELDS = ("r", "R", "l", "t")
DESIGN_TOL = 1e-9


class SoftPrbmError(Exception):
    """Base class for all package errors."""


class ValidationError(SoftPrbmError, ValueError):
    """Input does not satisfy a documented precondition or schema."""


class NumericalError(SoftPrbmError, ArithmeticError):
    """A numerical procedure failed (no root, divergence, ill-conditioning)."""


class ActuationKind(str, enum.Enum):
    PRESSURE = "pressure"
    TENDON = "tendon"

    @classmethod
    def parse(cls, value) -> "ActuationKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {"pressure": cls.PRESSURE, "tendon": cls.TENDON, "tendon_force": cls.TENDON}
        if text not in aliases:
            raise ValidationError(f"unknown actuation kind {value!r}")
        return aliases[text]


class Condition(str, enum.Enum):
    FREE = "free"
    CONSTRAINED = "constrained"

    @classmethod
    def parse(cls, value) -> "Condition":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("free", "free_loading"):
            return cls.FREE
        if text == "constrained":
            return cls.CONSTRAINED
        raise ValidationError(f"unknown loading condition {value!r}")


@dataclass(frozen=True)
class ModuleDesign:
    """Geometry of one actuator module (all mm).

    Attributes
    ----------
    r : float
        Inner radius.
    R : float
        Average radius.
    l : float
        Module length.
    t : float
        Wall thickness.
    """

    r: float
    R: float
    l: float
    t: float

    def __post_init__(self):
        for name in DESIGN_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0.0:
                raise ValidationError(f"design field {name} must be positive, got {value}")
            object.__setattr__(self, name, value)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in DESIGN_FIELDS}

    def replace(self, **changes) -> "ModuleDesign":
        values = self.as_dict()
        values.update(changes)
        return ModuleDesign(**values)

    def shell_volume(self) -> float:
        """Volume of a thin cylindrical shell of radius R and wall t, mm^3."""
        return 2.0 * math.pi * self.R * self.t * self.l


def validate_design(d: ModuleDesign) -> bool:
    """Manufacturability check ``R - r >= l/4`` (1e-9 mm slack)."""
    return (d.R - d.r) >= d.l / 4.0 - DESIGN_TOL


def _levels(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    values = lo + step * np.arange(count, dtype=float)
    # strip representation noise such as 0.0018000000000000002
    values = np.round(values, 12)
    return np.minimum(values, hi)


@dataclass(frozen=True)
class SampleGrid:
    """Actuation x external-effort sweep for one characterized axis."""

    p_min: float
    p_max: float
    p_step: float
    ext_min: float = 0.0
    ext_max: float = 0.0
    ext_step: float = 1.0
    axis_label: str = "y"

    def __post_init__(self):
        for lo, hi, step, name in (
            (self.p_min, self.p_max, self.p_step, "p"),
            (self.ext_min, self.ext_max, self.ext_step, "ext"),
        ):
            if not (step > 0.0):
                raise ValidationError(f"{name} step must be positive")
            if hi < lo:
                raise ValidationError(f"{name} max must be >= min")

    def p_levels(self) -> np.ndarray:
        return _levels(self.p_min, self.p_max, self.p_step)

    def ext_levels(self) -> np.ndarray:
        return _levels(self.ext_min, self.ext_max, self.ext_step)

    def as_dict(self) -> dict:
        return {
            "p_min": self.p_min,
            "p_max": self.p_max,
            "p_step": self.p_step,
            "ext_min": self.ext_min,
            "ext_max": self.ext_max,
            "ext_step": self.ext_step,
            "axis_label": self.axis_label,
        }


def enumerate_grid(g: SampleGrid) -> list[tuple[float, float]]:
    """Cartesian product of actuation and external-effort levels, p outer."""
    return [(float(p), float(m)) for p in g.p_levels() for m in g.ext_levels()]


@dataclass(frozen=True, slots=True)
class SampleRecord:
    """One characterization sample.

    ``tau`` is the net joint effort at deformation ``u``; under the constrained
    condition the applied external effort ``ext`` balances it (``tau = -ext``).
    """

    p: float
    u: float
    ext: float
    tau: float
    condition: Condition

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        for name in ("p", "u", "ext", "tau"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"sample field {name} is not finite")
            object.__setattr__(self, name, value)
        if self.condition is Condition.FREE and self.ext != 0.0:
            raise ValidationError("free-loading sample must have ext = 0")


def _frozen_array(values, shape_tail=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape_tail is not None and arr.shape[1:] != shape_tail:
        raise ValidationError(f"expected array of shape (n, {shape_tail}), got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Curve3:
    """Ordered 3D polyline in mm with strictly increasing arc length."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = _frozen_array(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"curve points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValidationError("curve needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("curve points must be finite")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0.0):
            raise ValidationError("curve has repeated consecutive points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def cumulative_length(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.segment_lengths())))

    @property
    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def normalized_arclength(self) -> np.ndarray:
        s = self.cumulative_length()
        return s / s[-1]

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "Curve3":
        rot = np.asarray(rotation, dtype=float)
        return Curve3(self.points @ rot.T + np.asarray(translation, dtype=float))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
