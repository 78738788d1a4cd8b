"""Polynomial joint-law surrogate built from a stiffness decomposition.

The net effort is assembled as::

    tau_n(p, u) = -integral_0^u (k_a(p) + k_e(v)) dv + k_free(p)

with ``k_a`` a polynomial in actuation, ``k_e`` a polynomial in deformation
and ``k_free(p) = tau_n(p, 0)`` fitted through the origin.  Coefficient
arrays are stored low-to-high degree.

Only the sum of the constant terms of ``k_a`` and ``k_e`` is observable from
sampled efforts; ``FitConfig.intercept_to`` decides which term carries it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ActuationKind, NumericalError, ValidationError
from .oracle import SampleSet

FORMAT_VERSION = 1
MAX_DEGREE = 5


class InsufficientData(ValidationError):
    pass


class IllConditioned(NumericalError):
    pass


class KindMismatch(ValidationError):
    pass


@dataclass(frozen=True)
class FitConfig:
    ka_degree: int = 1
    ke_degree: int = 1
    kfree_degree: int = 1
    intercept_to: str = "actuation"  # or "deformation"
    cond_limit: float = 1e10
    min_points: int = 3

    def __post_init__(self):
        for name in ("ka_degree", "ke_degree", "kfree_degree"):
            deg = getattr(self, name)
            if not 0 <= deg <= MAX_DEGREE:
                raise ValidationError(f"{name} must be in [0, {MAX_DEGREE}]")
        if self.kfree_degree < 1:
            raise ValidationError("kfree_degree must be >= 1 (fit passes through the origin)")
        if self.intercept_to not in ("actuation", "deformation"):
            raise ValidationError("intercept_to must be 'actuation' or 'deformation'")

    def as_dict(self) -> dict:
        return {
            "ka_degree": self.ka_degree,
            "ke_degree": self.ke_degree,
            "kfree_degree": self.kfree_degree,
            "intercept_to": self.intercept_to,
            "cond_limit": self.cond_limit,
        }


def lstsq_qr(A: np.ndarray, y: np.ndarray, cond_limit: float = 1e10) -> np.ndarray:
    """Least squares via QR on column-equilibrated ``A``.

    Raises IllConditioned when the normal-equation condition number
    ``cond(A)**2`` of the equilibrated system exceeds ``cond_limit``.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.shape[1] == 0:
        return np.zeros(0)
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0.0):
        raise IllConditioned("design matrix has an all-zero column")
    q, r = np.linalg.qr(A / norms)
    sv = np.linalg.svd(r, compute_uv=False)
    cond2 = (sv[0] / sv[-1]) ** 2 if sv[-1] > 0 else math.inf
    if cond2 > cond_limit:
        raise IllConditioned(f"normal-equation condition number {cond2:.3g} exceeds {cond_limit:.3g}")
    return np.linalg.solve(r, q.T @ y) / norms


def _r2(target: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((target - fitted) ** 2))
    ss_tot = float(np.sum((target - np.mean(target)) ** 2)) if target.size else 0.0
    if ss_tot == 0.0:
        # degenerate target: perfect when nothing is left unexplained
        return 1.0 if ss_res <= 1e-24 else float("nan")
    return 1.0 - ss_res / ss_tot


def _term_report(target, fitted) -> dict:
    resid = np.abs(np.asarray(target) - np.asarray(fitted))
    return {
        "n": int(np.size(target)),
        "r2": _r2(np.asarray(target), np.asarray(fitted)),
        "max_residual": float(resid.max()) if resid.size else 0.0,
    }


@dataclass(frozen=True)
class StiffnessTerms:
    k_a: tuple
    k_e: tuple
    k_free: tuple
    kind: ActuationKind
    axis_label: str = "y"
    report: dict = field(default_factory=dict)
    operating_range: dict = field(default_factory=dict)


def _level_groups(p: np.ndarray) -> list[np.ndarray]:
    levels = np.unique(p)
    return [np.flatnonzero(p == lv) for lv in levels]


def extract_stiffness(s: SampleSet, cfg: FitConfig | None = None) -> StiffnessTerms:
    """Finite-difference stiffness samples and their polynomial fits.

    1. At each actuation level, ``-d tau/du`` across adjacent constrained
       samples (central inside, second-order one-sided at the ends) gives
       ``K = k_a(p) + k_e(u)``.
    2. Demeaning within each level removes ``k_a``; the non-constant part of
       ``k_e`` is fitted on the pooled residual variation.
    3. The per-level intercepts are ``k_a(p)`` samples (plus the shared
       constant), fitted in ``p``.
    4. Each free-loading deflection ``u*`` integrates to
       ``tau_n(p, 0) = tau(p, u*) + integral_0^u* K dv``; those samples fit
       ``k_free`` through the origin.
    """
    cfg = cfg or FitConfig()
    a = s.arrays()
    order = np.lexsort((a["tau"], a["ext"], a["u"], a["p"]))
    p, u, tau, free = a["p"][order], a["u"][order], a["tau"][order], a["free"][order]

    cons = ~free
    pc, uc, tc = p[cons], u[cons], tau[cons]
    pf, uf, tf = p[free], u[free], tau[free]

    if pf.size < cfg.min_points:
        raise InsufficientData(f"need >= {cfg.min_points} free-loading records, got {pf.size}")

    k_samples = []  # (level p, u array, K array)
    for idx in _level_groups(pc):
        if idx.size < cfg.min_points:
            raise InsufficientData(
                f"need >= {cfg.min_points} constrained records at p={pc[idx[0]]!r}, got {idx.size}"
            )
        ul, tl = uc[idx], tc[idx]
        if np.all(ul == ul[0]):
            if np.all(tl == tl[0]):
                continue  # rigid, unloaded level carries no stiffness information
            raise InsufficientData(f"repeated deformation with varying effort at p={pc[idx[0]]!r}")
        if np.any(np.diff(ul) == 0.0):
            raise InsufficientData(f"duplicate deformation values at p={pc[idx[0]]!r}")
        k = -np.gradient(tl, ul, edge_order=2)
        k_samples.append((float(pc[idx[0]]), ul, k))

    n_ka = cfg.ka_degree + 1
    ke_slope = np.zeros(cfg.ke_degree)  # coefficients of u^1..u^deg
    report = {}
    if not k_samples:
        k_a = np.zeros(n_ka)
        k_e = np.zeros(cfg.ke_degree + 1)
        report["k_e"] = _term_report(np.zeros(0), np.zeros(0)) | {"r2": 1.0}
        report["k_a"] = _term_report(np.zeros(0), np.zeros(0)) | {"r2": 1.0}
    else:
        if cfg.ke_degree > 0:
            rows, target = [], []
            for _, ul, k in k_samples:
                powers = np.column_stack([ul**j for j in range(1, cfg.ke_degree + 1)])
                rows.append(powers - powers.mean(axis=0))
                target.append(k - k.mean())
            A = np.vstack(rows)
            y = np.concatenate(target)
            ke_slope = lstsq_qr(A, y, cfg.cond_limit)
            report["k_e"] = _term_report(y, A @ ke_slope)
        else:
            report["k_e"] = {"n": 0, "r2": 1.0, "max_residual": 0.0}

        levels, intercepts = [], []
        for lv, ul, k in k_samples:
            shape = sum(ke_slope[j - 1] * ul**j for j in range(1, cfg.ke_degree + 1))
            levels.append(lv)
            intercepts.append(float(np.mean(k - shape)))
        levels = np.array(levels)
        intercepts = np.array(intercepts)
        if levels.size < n_ka:
            raise InsufficientData(
                f"k_a degree {cfg.ka_degree} needs {n_ka} actuation levels, got {levels.size}"
            )
        A = np.vander(levels, n_ka, increasing=True)
        k_a = lstsq_qr(A, intercepts, cfg.cond_limit)
        report["k_a"] = _term_report(intercepts, A @ k_a)
        k_e = np.concatenate(([0.0], ke_slope))
        if cfg.intercept_to == "deformation":
            k_e[0], k_a[0] = k_a[0], 0.0

    # tau_n(p, 0) from free-loading deflections
    ka_f = np.polynomial.polynomial.polyval(pf, k_a)
    integral = ka_f * uf + sum(k_e[j] * uf ** (j + 1) / (j + 1) for j in range(k_e.size))
    tau0 = tf + integral
    A = np.column_stack([pf**j for j in range(1, cfg.kfree_degree + 1)])
    if np.all(pf == 0.0):
        raise InsufficientData("free-loading records need at least one nonzero actuation level")
    kfree_tail = lstsq_qr(A, tau0, cfg.cond_limit)
    k_free = np.concatenate(([0.0], kfree_tail))
    report["k_free"] = _term_report(tau0, A @ kfree_tail)

    operating = {
        "p": [float(p.min()), float(p.max())],
        "u": [float(u.min()), float(u.max())],
    }
    return StiffnessTerms(
        k_a=tuple(float(v) for v in k_a),
        k_e=tuple(float(v) for v in k_e),
        k_free=tuple(float(v) for v in k_free),
        kind=s.kind,
        axis_label=s.axis_label,
        report=report,
        operating_range=operating,
    )


@dataclass(frozen=True)
class PolySurrogate:
    """Closed-form ``tau_n(p, u)``; ``k_free[0]`` is always zero."""

    k_a: tuple
    k_e: tuple
    k_free: tuple
    kind: ActuationKind = ActuationKind.PRESSURE
    axis_label: str = "y"
    fit_report: dict = field(default_factory=dict)
    operating_range: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ActuationKind.parse(self.kind))
        for name in ("k_a", "k_e", "k_free"):
            coeffs = tuple(float(v) for v in getattr(self, name))
            if not coeffs:
                raise ValidationError(f"{name} needs at least one coefficient")
            object.__setattr__(self, name, coeffs)
        if self.k_free[0] != 0.0:
            raise ValidationError("k_free must pass through the origin")
        P = np.polynomial.polynomial
        object.__setattr__(self, "_ke_int", P.polyint(self.k_e))
        object.__setattr__(self, "_ke_int2", P.polyint(self.k_e, 2))

    @classmethod
    def from_coefficients(cls, m_a, b_a, m_e, b_e, k_n, **kwargs) -> "PolySurrogate":
        return cls(k_a=(b_a, m_a), k_e=(b_e, m_e), k_free=(0.0, k_n), **kwargs)

    # five named coefficients of the default linear configuration
    @property
    def m_a(self):
        return self.k_a[1] if len(self.k_a) > 1 else 0.0

    @property
    def b_a(self):
        return self.k_a[0]

    @property
    def m_e(self):
        return self.k_e[1] if len(self.k_e) > 1 else 0.0

    @property
    def b_e(self):
        return self.k_e[0]

    @property
    def k_n(self):
        return self.k_free[1] if len(self.k_free) > 1 else 0.0

    def coefficients(self) -> tuple:
        """(m_a, b_a, m_e, b_e, k_n)."""
        return (self.m_a, self.b_a, self.m_e, self.b_e, self.k_n)

    @property
    def degrees(self) -> dict:
        return {
            "k_a": len(self.k_a) - 1,
            "k_e": len(self.k_e) - 1,
            "k_free": len(self.k_free) - 1,
        }

    def eval(self, p, u):
        p = np.asarray(p, dtype=float)
        u = np.asarray(u, dtype=float)
        ka = np.polynomial.polynomial.polyval(p, self.k_a)
        ke_int = np.polynomial.polynomial.polyval(u, self._ke_int)
        return -ka * u - ke_int + np.polynomial.polynomial.polyval(p, self.k_free)

    __call__ = eval

    def d_du(self, p, u):
        """Analytic partial derivative ``d tau_n / du = -(k_a(p) + k_e(u))``."""
        p = np.asarray(p, dtype=float)
        u = np.asarray(u, dtype=float)
        return -(np.polynomial.polynomial.polyval(p, self.k_a) + np.polynomial.polynomial.polyval(u, self.k_e))

    def d_dp(self, p, u):
        p = np.asarray(p, dtype=float)
        u = np.asarray(u, dtype=float)
        dka = np.polynomial.polynomial.polyder(self.k_a)
        dkf = np.polynomial.polynomial.polyder(self.k_free)
        return -np.polynomial.polynomial.polyval(p, dka) * u + np.polynomial.polynomial.polyval(p, dkf)

    def potential(self, p, u):
        """Joint potential ``V`` with ``tau_n = -dV/du`` and ``V(p, 0) = 0``."""
        p = np.asarray(p, dtype=float)
        u = np.asarray(u, dtype=float)
        ka = np.polynomial.polynomial.polyval(p, self.k_a)
        ke_int2 = np.polynomial.polynomial.polyval(u, self._ke_int2)
        return 0.5 * ka * u**2 + ke_int2 - np.polynomial.polynomial.polyval(p, self.k_free) * u

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "poly_surrogate",
            "kind": self.kind.value,
            "axis": self.axis_label,
            "degrees": self.degrees,
            "coefficients": {
                "k_a": list(self.k_a),
                "k_e": list(self.k_e),
                "k_free": list(self.k_free),
            },
            "named": dict(zip(("m_a", "b_a", "m_e", "b_e", "k_n"), self.coefficients())),
            "operating_range": self.operating_range,
            "fit_report": self.fit_report,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolySurrogate":
        if data.get("format_version") != FORMAT_VERSION or data.get("type") != "poly_surrogate":
            raise ValidationError("not a version-1 polynomial surrogate document")
        c = data["coefficients"]
        return cls(
            k_a=tuple(c["k_a"]),
            k_e=tuple(c["k_e"]),
            k_free=tuple(c["k_free"]),
            kind=data["kind"],
            axis_label=data.get("axis", "y"),
            fit_report=data.get("fit_report", {}),
            operating_range=data.get("operating_range", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PolySurrogate":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def assemble_surrogate(terms: StiffnessTerms) -> PolySurrogate:
    return PolySurrogate(
        k_a=terms.k_a,
        k_e=terms.k_e,
        k_free=terms.k_free,
        kind=terms.kind,
        axis_label=terms.axis_label,
        fit_report={"terms": terms.report},
        operating_range=terms.operating_range,
    )


@dataclass(frozen=True)
class QualityReport:
    rmse: float
    max_abs: float
    effort_range: float
    rmse_normalized: float
    max_normalized: float
    n: int

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "max_abs": self.max_abs,
            "effort_range": self.effort_range,
            "rmse_normalized": self.rmse_normalized,
            "max_normalized": self.max_normalized,
            "n": self.n,
        }


def fit_quality(s: PolySurrogate, holdout: SampleSet) -> QualityReport:
    """Prediction error on ``holdout``, raw and relative to its effort range."""
    if len(holdout) == 0:
        raise ValidationError("holdout is empty")
    if holdout.kind is not s.kind:
        raise KindMismatch(f"surrogate kind {s.kind.value} vs holdout {holdout.kind.value}")
    a = holdout.arrays()
    err = s.eval(a["p"], a["u"]) - a["tau"]
    rmse = float(np.sqrt(np.mean(err**2)))
    max_abs = float(np.max(np.abs(err)))
    rng = float(np.ptp(a["tau"]))
    norm = rng if rng > 0 else float("nan")
    return QualityReport(rmse, max_abs, rng, rmse / norm, max_abs / norm, int(err.size))


def fit_poly_surrogate(s: SampleSet, cfg: FitConfig | None = None) -> PolySurrogate:
    """extract + assemble, with the training-set quality stored in fit_report."""
    cfg = cfg or FitConfig()
    sur = assemble_surrogate(extract_stiffness(s, cfg))
    quality = fit_quality(sur, s)
    report = dict(sur.fit_report)
    report["training"] = quality.as_dict()
    report["config"] = cfg.as_dict()
    return PolySurrogate(
        sur.k_a, sur.k_e, sur.k_free, sur.kind, sur.axis_label, report, sur.operating_range
    )
