"""Synthetic ground-truth actuator laws standing in for FEM, and CSV exchange.

Every law is written as the net joint effort ``tau(p, u)``.  A free-loading
sample stores the natural deflection (``tau = 0``); a constrained sample at
external effort ``M`` stores the deflection where ``tau(p, u) + M = 0``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exprs
from .core import (
    DESIGN_FIELDS,
    ActuationKind,
    Condition,
    ModuleDesign,
    NumericalError,
    SampleGrid,
    SampleRecord,
    ValidationError,
)

CSV_COLUMNS = ("axis", "condition", "p", "u", "ext", "tau")

LAW_FORMS = {
    # name: parameter names
    "separable_linear": ("a1", "a0", "e1", "e0", "c"),
    "separable_cubic": ("a1", "a0", "e2", "e1", "e0", "c"),
    "nonseparable": ("a1", "a0", "e1", "g", "c"),
}


class NoRootInBracket(NumericalError):
    pass


class ParseError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class InvariantError(ValidationError):
    pass


@dataclass(frozen=True)
class GroundTruthLaw:
    """Closed-form reference law.

    Forms (``K = a1*p + a0``):

    * ``separable_linear``: ``-K u - (e1 u^2/2 + e0 u) + c p``
    * ``separable_cubic``:  ``-K u - (e2 u^3/3 + e1 u^2/2 + e0 u) + c p``
    * ``nonseparable``:     ``-K u - e1 u^3 - g p u^2 + c p``
    """

    form: str
    params: tuple
    noise_std: float = 0.0
    seed: int = 0
    bracket: tuple = (-10.0, 10.0)
    xtol: float = 1e-12

    def __post_init__(self):
        if self.form not in LAW_FORMS:
            raise ValidationError(f"unknown law form {self.form!r}")
        params = tuple(float(v) for v in self.params)
        if len(params) != len(LAW_FORMS[self.form]):
            raise ValidationError(
                f"{self.form} needs {len(LAW_FORMS[self.form])} params, got {len(params)}"
            )
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        lo, hi = (float(v) for v in self.bracket)
        if not lo < hi:
            raise ValidationError("bracket must satisfy lo < hi")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "bracket", (lo, hi))

    @property
    def named(self) -> dict:
        return dict(zip(LAW_FORMS[self.form], self.params))

    def effort(self, p, u):
        c = self.named
        p = np.asarray(p, dtype=float)
        u = np.asarray(u, dtype=float)
        k = c["a1"] * p + c["a0"]
        if self.form == "separable_linear":
            return -k * u - (0.5 * c["e1"] * u**2 + c["e0"] * u) + c["c"] * p
        if self.form == "separable_cubic":
            return -k * u - (c["e2"] * u**3 / 3.0 + 0.5 * c["e1"] * u**2 + c["e0"] * u) + c["c"] * p
        return -k * u - c["e1"] * u**3 - c["g"] * p * u**2 + c["c"] * p

    def as_dict(self) -> dict:
        return {
            "form": self.form,
            "params": list(self.params),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "bracket": list(self.bracket),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthLaw":
        params = data["params"]
        if isinstance(params, dict):
            names = LAW_FORMS.get(data["form"])
            if names is None:
                raise ValidationError(f"unknown law form {data['form']!r}")
            missing = [n for n in names if n not in params]
            if missing:
                raise ValidationError(f"law params missing {missing}")
            params = [params[n] for n in names]
        return cls(
            form=data["form"],
            params=tuple(params),
            noise_std=float(data.get("noise_std", 0.0)),
            seed=int(data.get("seed", 0)),
            bracket=tuple(data.get("bracket", (-10.0, 10.0))),
        )


def solve_deflection(law: GroundTruthLaw, p: float, ext: float, n_scan: int = 400) -> float:
    """Stable deflection ``u`` with ``tau(p, u) + ext = 0`` inside the law's bracket.

    The bracket is scanned for descending sign changes (the stable branch,
    ``d tau/du < 0``); the crossing nearest ``u = 0`` is refined by bisection
    and a final secant step inside the last bracket.
    """
    lo, hi = law.bracket

    def f(u):
        return float(law.effort(p, u)) + ext

    grid = np.linspace(lo, hi, n_scan + 1)
    if lo < 0.0 < hi:
        grid = np.unique(np.append(grid, 0.0))
    vals = law.effort(p, grid) + ext
    exact = np.flatnonzero(vals == 0.0)
    cells = np.flatnonzero((vals[:-1] > 0.0) & (vals[1:] <= 0.0))
    stable_exact = [
        i for i in exact if (i + 1 < vals.size and vals[i + 1] < 0.0) or (i > 0 and vals[i - 1] > 0.0)
    ]
    candidates = [(abs(grid[i]), "exact", i) for i in stable_exact]
    candidates += [(min(abs(grid[i]), abs(grid[i + 1])), "cell", i) for i in cells if vals[i + 1] != 0.0]
    if not candidates:
        raise NoRootInBracket(
            f"no stable root of tau(p={p}, u) + {ext} in [{lo}, {hi}]; external effort out of range"
        )
    _, mode, i = min(candidates)
    if mode == "exact":
        return float(grid[i])
    a, b = float(grid[i]), float(grid[i + 1])
    fa, fb = float(vals[i]), float(vals[i + 1])
    while b - a > law.xtol:
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm > 0.0:
            a, fa = mid, fm
        else:
            b, fb = mid, fm
    return a + fa * (b - a) / (fa - fb)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Samples of one actuator axis, all sharing kind and axis label."""

    design: ModuleDesign
    kind: ActuationKind
    axis_label: str
    records: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ActuationKind.parse(self.kind))
        object.__setattr__(self, "records", tuple(self.records))
        problems = check_records(self.records)
        if problems:
            raise InvariantError("; ".join(problems))

    def __len__(self):
        return len(self.records)

    def arrays(self) -> dict:
        recs = self.records
        return {
            "p": np.array([r.p for r in recs]),
            "u": np.array([r.u for r in recs]),
            "ext": np.array([r.ext for r in recs]),
            "tau": np.array([r.tau for r in recs]),
            "free": np.array([r.condition is Condition.FREE for r in recs]),
        }

    def free(self) -> list:
        return [r for r in self.records if r.condition is Condition.FREE]

    def constrained(self) -> list:
        return [r for r in self.records if r.condition is Condition.CONSTRAINED]

    def training_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(p, u) inputs and tau outputs over all records."""
        a = self.arrays()
        return np.column_stack([a["p"], a["u"]]), a["tau"][:, None]


def check_records(records, row_numbers=None) -> list[str]:
    """Invariant violations of a record list, with row numbers when given."""
    problems = []
    free_levels = {r.p for r in records if r.condition is Condition.FREE}
    for idx, rec in enumerate(records):
        where = f"row {row_numbers[idx]}" if row_numbers else f"record {idx}"
        if rec.condition is Condition.FREE and rec.ext != 0.0:
            problems.append(f"{where}: free-loading row with ext != 0")
        if rec.condition is Condition.CONSTRAINED and rec.p not in free_levels:
            problems.append(f"{where}: constrained p={rec.p!r} has no free-loading level")
    return problems


def generate_samples(
    law: GroundTruthLaw,
    grid: SampleGrid,
    design: ModuleDesign,
    kind: ActuationKind = ActuationKind.PRESSURE,
) -> SampleSet:
    """Emulate the free-loading and force-controlled constrained sweeps."""
    rng = np.random.default_rng(law.seed)
    ext_levels = grid.ext_levels()
    records = []

    def noisy(u):
        if law.noise_std == 0.0:
            return u
        return u * (1.0 + law.noise_std * rng.standard_normal())

    for p in grid.p_levels():
        p = float(p)
        u_free = solve_deflection(law, p, 0.0)
        records.append(SampleRecord(p, noisy(u_free), 0.0, 0.0, Condition.FREE))
        for m in ext_levels:
            m = float(m)
            u = solve_deflection(law, p, m)
            records.append(SampleRecord(p, noisy(u), m, 0.0 - m, Condition.CONSTRAINED))
    return SampleSet(
        design=design,
        kind=ActuationKind.parse(kind),
        axis_label=grid.axis_label,
        records=tuple(records),
        provenance={"source": "synthetic", "law": law.as_dict(), "grid": grid.as_dict()},
    )


@dataclass(frozen=True)
class LawFamily:
    """Design-conditioned ground truth: per-axis law forms whose parameters
    are expressions in the design fields ``r, R, l, t``."""

    forms: dict
    params: dict
    noise_std: float = 0.0
    seed: int = 0
    bracket: tuple = (-10.0, 10.0)

    def law(self, axis: str, design: ModuleDesign) -> GroundTruthLaw:
        if axis not in self.forms:
            raise ValidationError(f"law family has no axis {axis!r}")
        names = design.as_dict()
        form = self.forms[axis]
        spec = self.params[axis]
        values = [float(exprs.evaluate(spec[n], names)) for n in LAW_FORMS[form]]
        return GroundTruthLaw(form, tuple(values), self.noise_std, self.seed, self.bracket)

    @property
    def axes(self) -> tuple:
        return tuple(self.forms)

    def as_dict(self) -> dict:
        return {
            "axes": {
                a: {"form": self.forms[a], "params": dict(self.params[a])} for a in self.forms
            },
            "noise_std": self.noise_std,
            "seed": self.seed,
            "bracket": list(self.bracket),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LawFamily":
        axes = data["axes"]
        return cls(
            forms={a: axes[a]["form"] for a in axes},
            params={a: dict(axes[a]["params"]) for a in axes},
            noise_std=float(data.get("noise_std", 0.0)),
            seed=int(data.get("seed", 0)),
            bracket=tuple(data.get("bracket", (-10.0, 10.0))),
        )


# ---------------------------------------------------------------------------
# CSV exchange


@dataclass(frozen=True)
class IngestConfig:
    """How to read an external export into the canonical schema.

    ``columns`` maps canonical names to file headers, ``scale`` multiplies
    numeric columns (unit conversion happens here and nowhere else), and the
    remaining fields fill in metadata absent from the file.
    """

    columns: dict = field(default_factory=dict)
    scale: dict = field(default_factory=dict)
    kind: str | None = None
    design: dict | None = None
    axis: str | None = None


def _fmt(x: float) -> str:
    return repr(float(x))


def samples_to_csv(s: SampleSet) -> str:
    buf = io.StringIO()
    buf.write(f"# kind={s.kind.value}\n")
    buf.write(f"# axis={s.axis_label}\n")
    for name in DESIGN_FIELDS:
        buf.write(f"# {name}={_fmt(getattr(s.design, name))}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in s.records:
        buf.write(
            ",".join(
                (s.axis_label, r.condition.value, _fmt(r.p), _fmt(r.u), _fmt(r.ext), _fmt(r.tau))
            )
            + "\n"
        )
    return buf.getvalue()


def write_samples_csv(s: SampleSet, path) -> Path:
    path = Path(path)
    path.write_text(samples_to_csv(s), encoding="utf-8", newline="\n")
    return path


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def ingest_csv(path, schema_config: IngestConfig | None = None) -> SampleSet:
    """Read a canonical (or column-mapped) CSV export into a SampleSet."""
    cfg = schema_config or IngestConfig()
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    lines = text.splitlines()

    meta = {}
    header_idx = None
    for idx, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        header_idx = idx
        break
    if header_idx is None:
        raise SchemaError(f"{path}: no header row")

    reader = csv.reader(lines[header_idx:])
    header = [h.strip() for h in next(reader)]
    colmap = {c: cfg.columns.get(c, c) for c in CSV_COLUMNS}
    required = ["condition", "p", "u", "ext", "tau"]
    missing = [c for c in required if colmap[c] not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")
    pos = {c: header.index(colmap[c]) for c in CSV_COLUMNS if colmap[c] in header}

    kind_text = cfg.kind or meta.get("kind")
    if kind_text is None:
        raise SchemaError(f"{path}: actuation kind not given (metadata '# kind=...')")
    kind = ActuationKind.parse(kind_text)

    if cfg.design is not None:
        design = ModuleDesign(**{k: float(cfg.design[k]) for k in DESIGN_FIELDS})
    else:
        try:
            design = ModuleDesign(**{k: float(meta[k]) for k in DESIGN_FIELDS})
        except KeyError as exc:
            raise SchemaError(f"{path}: design parameter {exc.args[0]} missing") from None
        except ValueError as exc:
            raise ParseError(f"{path}: bad design metadata: {exc}") from None

    records, rows, axes = [], [], set()
    for offset, row in enumerate(reader):
        line_no = header_idx + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: row {line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = {
                c: float(row[pos[c]]) * float(cfg.scale.get(c, 1.0)) for c in ("p", "u", "ext", "tau")
            }
            cond = Condition.parse(row[pos["condition"]])
        except ValueError as exc:
            raise ParseError(f"{path}: row {line_no}: {exc}") from None
        if not all(math.isfinite(v) for v in vals.values()):
            raise ParseError(f"{path}: row {line_no}: non-finite value")
        axis = row[pos["axis"]].strip() if "axis" in pos else (cfg.axis or meta.get("axis", "y"))
        if cfg.axis is not None and axis != cfg.axis:
            continue
        axes.add(axis)
        if cond is Condition.FREE and vals["ext"] != 0.0:
            raise InvariantError(f"{path}: row {line_no}: free-loading row with ext != 0")
        records.append(SampleRecord(vals["p"], vals["u"], vals["ext"], vals["tau"], cond))
        rows.append(line_no)
    if not records:
        raise SchemaError(f"{path}: no data rows")
    if len(axes) > 1:
        raise InvariantError(f"{path}: mixed axis labels {sorted(axes)}; select one with axis=")
    problems = check_records(records, rows)
    if problems:
        raise InvariantError(f"{path}: " + "; ".join(problems))
    return SampleSet(
        design=design,
        kind=kind,
        axis_label=axes.pop(),
        records=tuple(records),
        provenance={"source": "ingested", "path": str(path), "sha256": _sha256(raw)},
    )
