"""Design-conditioned surrogate generation.

Two variants:

* ``CoeffMetaModel``: design parameters -> the five polynomial coefficients
  ``(m_a, b_a, m_e, b_e, k_n)``.
* ``BehaviorMetaModel``: ``(design parameters, p, u) -> tau``, one network
  per characterized axis.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exprs
from .core import DESIGN_FIELDS, ModuleDesign, ValidationError, validate_design
from .mlp import MlpSpec, MlpSurrogate, Normalizer, TrainConfig, r_squared, train
from .oracle import SampleSet
from .polyfit import PolySurrogate

FORMAT_VERSION = 1
COEFF_NAMES = ("m_a", "b_a", "m_e", "b_e", "k_n")
DEFAULT_CONSTRAINT = "R - r >= l/4"


class EmptyFamily(ValidationError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DesignFamily:
    """Filtered Cartesian grid of module designs."""

    varying: tuple  # ((name, (levels...)), ...)
    fixed: dict
    constraint: str
    designs: tuple

    @property
    def names(self) -> tuple:
        return tuple(name for name, _ in self.varying)

    @property
    def ids(self) -> tuple:
        return tuple(f"d{i:03d}" for i in range(len(self.designs)))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([min(levels) for _, levels in self.varying], dtype=float)
        hi = np.array([max(levels) for _, levels in self.varying], dtype=float)
        return lo, hi

    def vector(self, d: ModuleDesign) -> np.ndarray:
        return np.array([getattr(d, name) for name in self.names], dtype=float)

    def contains(self, d: ModuleDesign, tol: float = 1e-9) -> bool:
        """True when ``d`` lies in the per-parameter hull of the levels and
        matches every fixed value."""
        lo, hi = self.bounds()
        x = self.vector(d)
        inside = bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))
        fixed_ok = all(abs(getattr(d, k) - v) <= tol for k, v in self.fixed.items())
        return inside and fixed_ok

    def design(self, **values) -> ModuleDesign:
        merged = dict(self.fixed)
        merged.update(values)
        return ModuleDesign(**{k: float(merged[k]) for k in DESIGN_FIELDS})

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "design_family",
            "varying": {name: list(levels) for name, levels in self.varying},
            "fixed": dict(self.fixed),
            "constraint": self.constraint,
            "designs": [{"id": i, **d.as_dict()} for i, d in zip(self.ids, self.designs)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignFamily":
        family = build_family(data["varying"], data.get("fixed", {}), data.get("constraint", DEFAULT_CONSTRAINT))
        listed = data.get("designs")
        if listed is not None:
            got = [ModuleDesign(**{k: d[k] for k in DESIGN_FIELDS}) for d in listed]
            if tuple(got) != family.designs:
                raise ValidationError("family manifest design list disagrees with its grid and constraint")
        return family

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DesignFamily":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_family(varying: dict, fixed: dict, constraint=DEFAULT_CONSTRAINT) -> DesignFamily:
    """Cartesian product of ``varying`` levels (insertion order, last name
    fastest), kept where the constraint holds and the design is manufacturable.

    ``constraint`` is an expression over ``r, R, l, t`` or a callable taking a
    ModuleDesign.
    """
    if not varying:
        raise ValidationError("at least one varying parameter is required")
    for name in list(varying) + list(fixed):
        if name not in DESIGN_FIELDS:
            raise ValidationError(f"unknown design parameter {name!r}")
    overlap = set(varying) & set(fixed)
    if overlap:
        raise ValidationError(f"parameters both varying and fixed: {sorted(overlap)}")
    missing = set(DESIGN_FIELDS) - set(varying) - set(fixed)
    if missing:
        raise ValidationError(f"design parameters unspecified: {sorted(missing)}")
    var = tuple((name, tuple(float(v) for v in levels)) for name, levels in varying.items())
    if any(len(levels) == 0 for _, levels in var):
        raise ValidationError("every varying parameter needs at least one level")

    if callable(constraint):
        pred = constraint
        text = getattr(constraint, "__name__", "<callable>")
    else:
        text = str(constraint)
        tree = exprs.compile_expr(text)

        def pred(d, _tree=tree):
            return bool(exprs._eval(_tree, d.as_dict()))

    designs = []
    for combo in itertools.product(*(levels for _, levels in var)):
        values = dict(fixed)
        values.update({name: v for (name, _), v in zip(var, combo)})
        d = ModuleDesign(**{k: float(values[k]) for k in DESIGN_FIELDS})
        if validate_design(d) and pred(d):
            designs.append(d)
    if not designs:
        raise EmptyFamily("no design in the grid satisfies the constraint")
    return DesignFamily(var, {k: float(v) for k, v in fixed.items()}, text, tuple(designs))


def _guard(family: DesignFamily, d: ModuleDesign, guard: bool):
    if guard and not family.contains(d):
        warnings.warn(
            f"design {d.as_dict()} lies outside the family hull; meta-model is extrapolating",
            ExtrapolationWarning,
            stacklevel=3,
        )


def _design_normalizer(family: DesignFamily) -> Normalizer:
    lo, hi = family.bounds()
    return Normalizer.from_bounds(lo, hi)


@dataclass(eq=False)
class CoeffMetaModel:
    mlp: MlpSurrogate
    family: DesignFamily
    constant_columns: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def predict_coefficients(self, d: ModuleDesign) -> np.ndarray:
        out = np.array(self.mlp.predict(self.family.vector(d)), dtype=float)
        # coefficients that never vary across the family carry no design information
        for j, value in self.constant_columns.items():
            out[int(j)] = value
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "coeff_metamodel",
            "family": self.family.to_dict(),
            "outputs": list(COEFF_NAMES),
            "constant_columns": {str(k): v for k, v in self.constant_columns.items()},
            "mlp": self.mlp.to_dict(),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoeffMetaModel":
        if data.get("type") != "coeff_metamodel":
            raise ValidationError("not a coefficient meta-model document")
        return cls(
            MlpSurrogate.from_dict(data["mlp"]),
            DesignFamily.from_dict(data["family"]),
            {int(k): float(v) for k, v in data.get("constant_columns", {}).items()},
            data.get("report", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "CoeffMetaModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_coeff_metamodel(
    family: DesignFamily,
    surrogates,
    cfg: TrainConfig | None = None,
    hidden=(64, 64, 32),
    seed: int = 0,
) -> CoeffMetaModel:
    """Train design -> (m_a, b_a, m_e, b_e, k_n) on one surrogate per design."""
    surrogates = list(surrogates)
    if len(surrogates) != len(family.designs):
        raise ValidationError(
            f"need one surrogate per design ({len(family.designs)}), got {len(surrogates)}"
        )
    cfg = cfg or TrainConfig(max_iterations=1000, holdout_fraction=0.0)
    x = np.array([family.vector(d) for d in family.designs])
    y = np.array([s.coefficients() for s in surrogates])
    kind = surrogates[0].kind
    spec = MlpSpec(len(family.names), tuple(hidden), len(COEFF_NAMES), seed=seed)
    model, hist = train(spec, x, y, cfg, input_normalizer=_design_normalizer(family), kind=kind)

    constant = {j: float(y[0, j]) for j in range(y.shape[1]) if np.all(y[:, j] == y[0, j])}
    meta = CoeffMetaModel(model, family, constant)
    pred = np.array([meta.predict_coefficients(d) for d in family.designs])
    per = {}
    for j, name in enumerate(COEFF_NAMES):
        try:
            per[name] = r_squared(pred[:, j], y[:, j])
        except ValidationError:
            per[name] = float("nan")  # zero variance or single design: reported, not asserted
    varying = [j for j in range(y.shape[1]) if j not in constant]
    pooled = float("nan")
    if varying and y.shape[0] >= 2:
        zp = model.out_norm.forward(pred)[:, varying]
        zt = model.out_norm.forward(y)[:, varying]
        pooled = r_squared(zp, zt)
    meta.report = {
        "r2_per_coefficient": per,
        "r2_pooled": pooled,
        "history": hist.summary(),
        "n_designs": len(family.designs),
    }
    return meta


def instantiate(meta: CoeffMetaModel, d: ModuleDesign, guard: bool = True) -> PolySurrogate:
    """Polynomial surrogate for design ``d`` predicted by the meta-model."""
    _guard(meta.family, d, guard)
    m_a, b_a, m_e, b_e, k_n = (float(v) for v in meta.predict_coefficients(d))
    return PolySurrogate.from_coefficients(
        m_a, b_a, m_e, b_e, k_n, kind=meta.mlp.kind or "pressure", fit_report={"source": "coeff_metamodel"}
    )


@dataclass(eq=False)
class BehaviorMetaModel:
    """Per-axis networks ``(design..., p, u) -> tau``."""

    family: DesignFamily
    models: dict  # axis -> MlpSurrogate
    operating_range: dict = field(default_factory=dict)  # axis -> {"p": [lo, hi], "u": [lo, hi]}
    report: dict = field(default_factory=dict)

    @property
    def axes(self) -> tuple:
        return tuple(self.models)

    def inputs(self, d: ModuleDesign, p, u) -> np.ndarray:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        p, u = np.broadcast_arrays(p, u)
        dv = np.broadcast_to(self.family.vector(d), (p.size, len(self.family.names)))
        return np.column_stack([dv, p.ravel(), u.ravel()])

    def predict(self, axis: str, d: ModuleDesign, p, u) -> np.ndarray:
        return self.models[axis].predict(self.inputs(d, p, u))[:, 0]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "behavior_metamodel",
            "family": self.family.to_dict(),
            "inputs": [*self.family.names, "p", "u"],
            "models": {a: m.to_dict() for a, m in self.models.items()},
            "operating_range": self.operating_range,
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BehaviorMetaModel":
        if data.get("type") != "behavior_metamodel":
            raise ValidationError("not a behavior meta-model document")
        return cls(
            DesignFamily.from_dict(data["family"]),
            {a: MlpSurrogate.from_dict(m) for a, m in data["models"].items()},
            data.get("operating_range", {}),
            data.get("report", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "BehaviorMetaModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_behavior_metamodel(
    family: DesignFamily,
    sample_sets,
    cfg: TrainConfig | None = None,
    hidden=(64, 64),
    seed: int = 0,
) -> BehaviorMetaModel:
    """Aggregate every design's samples per axis and train one network each.

    ``sample_sets`` is a sequence aligned with ``family.designs`` whose items
    map axis label -> SampleSet.
    """
    sample_sets = list(sample_sets)
    if len(sample_sets) != len(family.designs):
        raise ValidationError(
            f"need sample sets for each of {len(family.designs)} designs, got {len(sample_sets)}"
        )
    axes = tuple(sample_sets[0])
    for i, per_axis in enumerate(sample_sets):
        if set(per_axis) != set(axes):
            raise ValidationError(
                f"design {family.ids[i]} has axes {sorted(per_axis)}, expected {sorted(axes)}"
            )
    cfg = cfg or TrainConfig(max_iterations=1000)
    design_norm = _design_normalizer(family)
    models, ranges, report = {}, {}, {}
    for axis in axes:
        xs, ys = [], []
        for d, per_axis in zip(family.designs, sample_sets):
            s: SampleSet = per_axis[axis]
            pu, tau = s.training_pairs()
            xs.append(np.column_stack([np.broadcast_to(family.vector(d), (pu.shape[0], len(family.names))), pu]))
            ys.append(tau)
        x = np.vstack(xs)
        y = np.vstack(ys)
        pu_norm = Normalizer.zscore(x[:, -2:])
        in_norm = Normalizer.concat(design_norm, pu_norm)
        spec = MlpSpec(x.shape[1], tuple(hidden), 1, seed=seed)
        model, hist = train(spec, x, y, cfg, input_normalizer=in_norm, kind=sample_sets[0][axis].kind)
        models[axis] = model
        ranges[axis] = {
            "p": [float(x[:, -2].min()), float(x[:, -2].max())],
            "u": [float(x[:, -1].min()), float(x[:, -1].max())],
        }
        report[axis] = hist.summary()
    return BehaviorMetaModel(family, models, ranges, report)


def behavior_design_law(meta: BehaviorMetaModel, d: ModuleDesign, guard: bool = True):
    """Emit the extrapolation warning for ``d`` once; return ``(meta, d)``."""
    _guard(meta.family, d, guard)
    return meta, d
