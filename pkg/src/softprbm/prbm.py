"""Quasi-static pseudo-rigid-body chain.

Each module carries one lumped joint placed ``joint_offset`` of the way along
the module. Lengths are in mm, masses in kg, forces in N, torques in N*m,
gravity in m/s^2. The chain grows along local +z of ``base_pose``.

Equilibrium solves, for every joint coordinate ``i``::

    tau_law_i(p, q_i) + Q_i(q) = 0

where ``Q`` collects the generalized efforts of gravity and tip loads.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Curve3, ModuleDesign, NumericalError, ValidationError, rot_z
from .metamodel import BehaviorMetaModel, _guard
from .mlp import MlpSurrogate
from .polyfit import PolySurrogate

DEFAULT_DENSITY = 1.1e-6  # kg/mm^3, silicone elastomer
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
SPHERICAL_AXES = ("y", "x", "z")  # intrinsic order: bend-y, bend-x, twist-z
FORMAT_VERSION = 1


class NonConvergence(NumericalError):
    """Raised when the solver exhausts its budget; ``state`` holds the best iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ClampSaturation(UserWarning):
    pass


def _range_pair(value, name) -> tuple:
    lo, hi = (float(v) for v in value)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValidationError(f"invalid {name} range {value!r}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Per-axis joint effort laws with their operating ranges.

    ``source`` is ``"poly"``, ``"mlp"`` or ``"meta"``. ``models`` maps an axis
    label to a PolySurrogate, an MlpSurrogate taking ``(p, u)``, or (for
    ``meta``) the shared BehaviorMetaModel. Outside ``operating_range`` the law
    is evaluated at the clamped point; beyond the deflection bounds a stiff
    hard stop of ``limit_stiffness`` N*m/rad is added.
    """

    source: str
    models: dict
    operating_range: dict
    design: ModuleDesign | None = None
    limit_stiffness: float = 1e3

    def __post_init__(self):
        if self.source not in ("poly", "mlp", "meta"):
            raise ValidationError(f"unknown law source {self.source!r}")
        if not self.models:
            raise ValidationError("a joint law needs at least one axis")
        if self.source == "meta" and self.design is None:
            raise ValidationError("meta laws need a module design")
        rng = {}
        for axis in self.models:
            if axis not in self.operating_range:
                raise ValidationError(f"no operating range for axis {axis!r}")
            r = self.operating_range[axis]
            rng[axis] = {"p": _range_pair(r["p"], "p"), "u": _range_pair(r["u"], "u")}
        object.__setattr__(self, "operating_range", rng)
        if not self.limit_stiffness > 0:
            raise ValidationError("limit_stiffness must be positive")

    # constructors -----------------------------------------------------------------
    @classmethod
    def poly(cls, surrogates, operating_range=None, **kw) -> "JointLaw":
        if isinstance(surrogates, PolySurrogate):
            surrogates = {surrogates.axis_label: surrogates}
        rng = dict(operating_range or {})
        for axis, s in surrogates.items():
            if axis not in rng:
                if not s.operating_range:
                    raise ValidationError(f"surrogate for axis {axis!r} has no operating range")
                rng[axis] = s.operating_range
        return cls("poly", dict(surrogates), rng, **kw)

    @classmethod
    def mlp(cls, models: dict, operating_range=None, **kw) -> "JointLaw":
        rng = dict(operating_range or {})
        for axis, m in models.items():
            if axis not in rng:
                if "operating_range" not in m.info:
                    raise ValidationError(f"network for axis {axis!r} has no operating range")
                rng[axis] = m.info["operating_range"]
        return cls("mlp", dict(models), rng, **kw)

    @classmethod
    def meta(cls, meta: BehaviorMetaModel, design: ModuleDesign, guard: bool = True, **kw) -> "JointLaw":
        _guard(meta.family, design, guard)
        return cls("meta", {a: meta for a in meta.axes}, dict(meta.operating_range), design=design, **kw)

    @property
    def axes(self) -> tuple:
        return tuple(self.models)

    # evaluation -------------------------------------------------------------------
    def _raw(self, axis: str, p: np.ndarray, u: np.ndarray) -> np.ndarray:
        model = self.models[axis]
        if self.source == "poly":
            return np.asarray(model.eval(p, u), dtype=float)
        if self.source == "mlp":
            return model.predict(np.column_stack([p, u]))[:, 0]
        return model.predict(axis, self.design, p, u)

    def effort(self, axis: str, p, u):
        """Clamped effort; returns ``(tau, p_clamped_mask, u_clamped_mask)``."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        p, u = np.broadcast_arrays(p, u)
        r = self.operating_range[axis]
        pc = np.clip(p, *r["p"])
        uc = np.clip(u, *r["u"])
        tau = self._raw(axis, pc.ravel(), uc.ravel()).reshape(u.shape)
        tau = tau - self.limit_stiffness * (u - uc)
        return tau, pc != p, uc != u

    def natural_deflection(self, axis: str, p: float, n_scan: int = 201) -> float:
        """Deflection with zero effort at actuation ``p`` (free loading)."""
        lo, hi = self.operating_range[axis]["u"]
        width = max(hi - lo, 1e-6)
        grid = np.linspace(lo - 0.05 * width, hi + 0.05 * width, n_scan)
        tau = self.effort(axis, p, grid)[0]
        sign = np.sign(tau)
        idx = np.nonzero((sign[:-1] > 0) & (sign[1:] <= 0))[0]
        if idx.size == 0:
            return float(grid[int(np.argmin(np.abs(tau)))])
        mid = 0.5 * (grid[idx] + grid[idx + 1])
        k = int(idx[np.argmin(np.abs(mid))])
        a, b = grid[k], grid[k + 1]
        # bracket zoom: each pass shrinks the bracket 64x
        for _ in range(8):
            if b - a < 1e-9:  # Newton polishes from here
                break
            sub = np.linspace(a, b, 65)
            t = self.effort(axis, p, sub)[0]
            j = int(np.argmax(t <= 0))
            if j == 0:
                a, b = sub[0], sub[0]
                break
            a, b = sub[j - 1], sub[j]
        return 0.5 * (a + b)

    def to_dict(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "type": "joint_law",
            "source": self.source,
            "operating_range": {a: {k: list(v) for k, v in r.items()} for a, r in self.operating_range.items()},
            "limit_stiffness": self.limit_stiffness,
            "design": None if self.design is None else self.design.as_dict(),
        }
        if self.source == "meta":
            doc["meta"] = next(iter(self.models.values())).to_dict()
            doc["axes"] = list(self.axes)
        else:
            doc["models"] = {a: m.to_dict() for a, m in self.models.items()}
        return doc

    @classmethod
    def from_dict(cls, data: dict) -> "JointLaw":
        if data.get("type") != "joint_law":
            raise ValidationError("not a joint law document")
        source = data["source"]
        design = ModuleDesign(**data["design"]) if data.get("design") else None
        if source == "meta":
            meta = BehaviorMetaModel.from_dict(data["meta"])
            models = {a: meta for a in data.get("axes", meta.axes)}
        elif source == "poly":
            models = {a: PolySurrogate.from_dict(m) for a, m in data["models"].items()}
        else:
            models = {a: MlpSurrogate.from_dict(m) for a, m in data["models"].items()}
        return cls(source, models, data["operating_range"], design, float(data.get("limit_stiffness", 1e3)))


@dataclass(frozen=True, eq=False)
class SegmentSpec:
    n: int
    design: ModuleDesign
    law: JointLaw
    phi: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("segment module count must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        if not math.isfinite(self.phi):
            raise ValidationError("phi must be finite")


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Serial chain of segments.

    ``link_masses`` gives one mass per module (kg); by default it is the shell
    volume times ``density``. Each module mass is split between the sub-links
    either side of its joint in proportion to their lengths, each share sitting
    at its sub-link midpoint.
    """

    segments: tuple
    joint_type: str = "revolute"
    link_masses: tuple | None = None
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_position: tuple = (0.0, 0.0, 0.0)
    gravity: tuple = DEFAULT_GRAVITY
    joint_offset: float = 0.5
    density: float = DEFAULT_DENSITY

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValidationError("chain needs at least one segment")
        if segs[0].phi != 0.0:
            raise ValidationError("the first segment's phi is fixed to 0")
        object.__setattr__(self, "segments", segs)
        if self.joint_type not in ("revolute", "spherical"):
            raise ValidationError(f"unknown joint type {self.joint_type!r}")
        need = ("y",) if self.joint_type == "revolute" else SPHERICAL_AXES
        for i, s in enumerate(segs):
            missing = [a for a in need if a not in s.law.models]
            if missing:
                raise ValidationError(f"segment {i} law lacks axes {missing}")
        if not 0.0 <= self.joint_offset < 1.0:
            raise ValidationError("joint_offset must lie in [0, 1)")
        n = sum(s.n for s in segs)
        if self.link_masses is None:
            masses = tuple(self.density * s.design.shell_volume() for s in segs for _ in range(s.n))
        else:
            masses = tuple(float(m) for m in self.link_masses)
        if len(masses) != n or any(not (m > 0 and math.isfinite(m)) for m in masses):
            raise ValidationError(f"need {n} positive finite link masses")
        object.__setattr__(self, "link_masses", masses)
        rot = np.array(self.base_rotation, dtype=float)
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValidationError("base_rotation must be a 3x3 rotation matrix")
        rot.setflags(write=False)
        object.__setattr__(self, "base_rotation", rot)
        object.__setattr__(self, "base_position", tuple(float(v) for v in self.base_position))
        object.__setattr__(self, "gravity", tuple(float(v) for v in self.gravity))
        if len(self.gravity) != 3 or len(self.base_position) != 3:
            raise ValidationError("gravity and base_position must be 3-vectors")

    @property
    def n_joints(self) -> int:
        return sum(s.n for s in self.segments)

    @property
    def dof_per_joint(self) -> int:
        return 1 if self.joint_type == "revolute" else 3

    @property
    def axes(self) -> tuple:
        return ("y",) if self.joint_type == "revolute" else SPHERICAL_AXES

    @property
    def n_dof(self) -> int:
        return self.n_joints * self.dof_per_joint

    @property
    def link_lengths(self) -> np.ndarray:
        return np.array([s.design.l for s in self.segments for _ in range(s.n)], dtype=float)

    @property
    def segment_index(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.segments) for _ in range(s.n)], dtype=int)

    @property
    def total_length(self) -> float:
        return float(self.link_lengths.sum())


def straight_chain(
    segments,
    joint_type="revolute",
    **kwargs,
) -> ChainSpec:
    """Convenience wrapper accepting plain tuples ``(n, design, law, phi)``."""
    segs = [s if isinstance(s, SegmentSpec) else SegmentSpec(*s) for s in segments]
    return ChainSpec(tuple(segs), joint_type, **kwargs)


@dataclass(frozen=True)
class LoadCase:
    """Actuation plus external loads.

    ``p`` is a scalar shared by every joint or one value per segment. A tip
    force is ``tip_force`` (fixed direction) plus, when ``tip_target`` is set,
    ``tip_force_magnitude`` directed from the tip toward that point. ``tip_mass``
    (kg) hangs on the tip along the chain's gravity vector.
    """

    p: float | tuple = 0.0
    tip_force: tuple = (0.0, 0.0, 0.0)
    tip_mass: float = 0.0
    tip_moment: tuple = (0.0, 0.0, 0.0)
    tip_target: tuple | None = None
    tip_force_magnitude: float = 0.0
    gravity_on: bool = True

    def __post_init__(self):
        p = self.p
        p = tuple(float(v) for v in p) if isinstance(p, (list, tuple, np.ndarray)) else float(p)
        object.__setattr__(self, "p", p)
        for name in ("tip_force", "tip_moment"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ValidationError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)
        if self.tip_target is not None:
            t = tuple(float(x) for x in self.tip_target)
            if len(t) != 3:
                raise ValidationError("tip_target must be a 3-vector")
            object.__setattr__(self, "tip_target", t)
        vals = [*np.atleast_1d(self.p), *self.tip_force, *self.tip_moment, self.tip_mass, self.tip_force_magnitude]
        if self.tip_target is not None:
            vals += list(self.tip_target)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("load case entries must be finite")

    def segment_pressures(self, n_segments: int) -> np.ndarray:
        if isinstance(self.p, tuple):
            if len(self.p) != n_segments:
                raise ValidationError(f"need {n_segments} per-segment actuation values, got {len(self.p)}")
            return np.array(self.p)
        return np.full(n_segments, self.p)

    def as_dict(self) -> dict:
        return {
            "p": list(self.p) if isinstance(self.p, tuple) else self.p,
            "tip_force": list(self.tip_force),
            "tip_mass": self.tip_mass,
            "tip_moment": list(self.tip_moment),
            "tip_target": None if self.tip_target is None else list(self.tip_target),
            "tip_force_magnitude": self.tip_force_magnitude,
            "gravity_on": self.gravity_on,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LoadCase":
        return cls(**data)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iterations: int = 200
    fd_step: float = 1e-6
    max_halvings: int = 30
    armijo: float = 1e-4
    warn_on_clamp: bool = True

    def __post_init__(self):
        if not self.tol > 0 or self.max_iterations < 1 or not self.fd_step > 0:
            raise ValidationError("invalid solver configuration")


@dataclass(eq=False)
class EquilibriumState:
    q: np.ndarray
    residual_norm: float
    clamp_events: list
    centerline: Curve3
    iterations: int = 0
    converged: bool = True
    message: str = ""

    @property
    def tip(self) -> np.ndarray:
        return np.asarray(self.centerline.points[-1])

    def as_dict(self) -> dict:
        return {
            "q": [float(v) for v in self.q],
            "residual_norm": self.residual_norm,
            "clamp_events": self.clamp_events,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "tip": [float(v) for v in self.tip],
        }


# ---------------------------------------------------------------------------------
# kinematics


def _batch_rot(axis: str, a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    i, j = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}[axis]
    k = 3 - i - j
    out[..., k, k] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


@dataclass
class _Frames:
    joint_origins: np.ndarray  # (B, J, 3)
    axes: np.ndarray  # (B, J*dof, 3)
    mass_points: np.ndarray  # (B, 2J, 3)
    tip: np.ndarray  # (B, 3)


def _forward(chain: ChainSpec, Q: np.ndarray) -> _Frames:
    """Batched forward kinematics for joint vectors ``Q`` of shape (B, n_dof)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B = Q.shape[0]
    J = chain.n_joints
    dof = chain.dof_per_joint
    R = np.broadcast_to(chain.base_rotation, (B, 3, 3)).copy()
    o = np.broadcast_to(np.asarray(chain.base_position), (B, 3)).copy()
    origins = np.empty((B, J, 3))
    axes = np.empty((B, J * dof, 3))
    masses = np.empty((B, 2 * J, 3))
    off = chain.joint_offset
    lengths = chain.link_lengths
    k = 0
    for seg in chain.segments:
        for m in range(seg.n):
            if m == 0 and seg.phi != 0.0:
                R = R @ rot_z(seg.phi)
            l = lengths[k]
            z = R[:, :, 2]
            masses[:, 2 * k] = o + z * (0.5 * off * l)
            oj = o + z * (off * l)
            origins[:, k] = oj
            if dof == 1:
                axes[:, k] = R[:, :, 1]
                R = R @ _batch_rot("y", Q[:, k])
            else:
                qy, qx, qz = Q[:, 3 * k], Q[:, 3 * k + 1], Q[:, 3 * k + 2]
                axes[:, 3 * k] = R[:, :, 1]
                R = R @ _batch_rot("y", qy)
                axes[:, 3 * k + 1] = R[:, :, 0]
                R = R @ _batch_rot("x", qx)
                axes[:, 3 * k + 2] = R[:, :, 2]
                R = R @ _batch_rot("z", qz)
            z = R[:, :, 2]
            masses[:, 2 * k + 1] = oj + z * (0.5 * (1.0 - off) * l)
            o = oj + z * ((1.0 - off) * l)
            k += 1
    return _Frames(origins, axes, masses, o)


def centerline(chain: ChainSpec, q) -> Curve3:
    """Base point, every joint origin (except one coincident with the base), then the tip."""
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_dof,):
        raise ValidationError(f"expected {chain.n_dof} joint coordinates, got shape {q.shape}")
    fr = _forward(chain, q[None, :])
    pts = [np.asarray(chain.base_position)]
    origins = fr.joint_origins[0]
    start = 1 if chain.joint_offset == 0.0 else 0
    pts.extend(origins[start:])
    pts.append(fr.tip[0])
    return Curve3(np.array(pts))


# ---------------------------------------------------------------------------------
# loads and residual


def _mass_split(chain: ChainSpec) -> np.ndarray:
    m = np.asarray(chain.link_masses)
    w = np.empty(2 * m.size)
    w[0::2] = m * chain.joint_offset
    w[1::2] = m * (1.0 - chain.joint_offset)
    return w


def _load_efforts(chain: ChainSpec, load: LoadCase, Q: np.ndarray, mass_w: np.ndarray) -> np.ndarray:
    """Generalized efforts (B, n_dof) of gravity and tip loads, N*m."""
    fr = _forward(chain, Q)
    B, J = fr.joint_origins.shape[:2]
    dof = chain.dof_per_joint
    g = np.asarray(chain.gravity)
    wrench = np.zeros((B, J, 3))  # moment about each joint origin, N*mm

    if load.gravity_on and np.any(g != 0.0):
        mp = fr.mass_points * mass_w[None, :, None]
        # suffix sums over mass points downstream of joint k (indices >= 2k+1)
        S = np.cumsum(mp[:, ::-1], axis=1)[:, ::-1][:, 1::2]
        M = np.cumsum(mass_w[::-1])[::-1][1::2]
        wrench += np.cross(S - M[None, :, None] * fr.joint_origins, g)

    force = np.broadcast_to(np.asarray(load.tip_force), (B, 3)).copy()
    if load.tip_mass:
        force += load.tip_mass * g
    if load.tip_target is not None and load.tip_force_magnitude:
        d = np.asarray(load.tip_target)[None, :] - fr.tip
        n = np.linalg.norm(d, axis=1, keepdims=True)
        force += load.tip_force_magnitude * d / np.where(n > 0, n, 1.0)
    if np.any(force != 0.0):
        wrench += np.cross(fr.tip[:, None, :] - fr.joint_origins, force[:, None, :])

    wrench *= 1e-3
    if any(load.tip_moment):
        wrench += np.asarray(load.tip_moment)
    per_dof = np.repeat(wrench, dof, axis=1)
    return np.einsum("bij,bij->bi", fr.axes, per_dof)


class _Problem:
    """Residual and Jacobian for one chain and load case."""

    def __init__(self, chain: ChainSpec, load: LoadCase, cfg: SolverConfig):
        self.chain = chain
        self.load = load
        self.cfg = cfg
        self.mass_w = _mass_split(chain)
        self.p_seg = load.segment_pressures(len(chain.segments))
        seg_of_joint = chain.segment_index
        dof = chain.dof_per_joint
        self.blocks = []  # (law, axis, dof indices, p)
        for si, seg in enumerate(chain.segments):
            joints = np.nonzero(seg_of_joint == si)[0]
            for ai, axis in enumerate(chain.axes):
                self.blocks.append((seg.law, axis, joints * dof + ai, self.p_seg[si]))
        self._group_list = self._groups()

    def _groups(self):
        # meta laws sharing one network are evaluated in a single batched call per axis
        groups = {}
        for b in self.blocks:
            law, axis = b[0], b[1]
            key = (id(law.models[axis]), axis) if law.source == "meta" else (id(b), axis)
            groups.setdefault(key, []).append(b)
        return list(groups.values())

    def law_efforts(self, U: np.ndarray):
        """Law efforts for joint vectors U (B, n_dof)."""
        out = np.empty_like(U)
        for group in self._group_list:
            law0, axis = group[0][0], group[0][1]
            if law0.source != "meta" or len(group) == 1:
                for law, axis, idx, p in group:
                    out[:, idx] = law.effort(axis, p, U[:, idx])[0]
                continue
            meta = law0.models[axis]
            rows, parts = [], []
            for law, _, idx, p in group:
                r = law.operating_range[axis]
                u = U[:, idx].ravel()
                uc = np.clip(u, *r["u"])
                pc = np.clip(p, *r["p"])
                rows.append(meta.inputs(law.design, np.full(u.size, pc), uc))
                parts.append((idx, u, uc, law.limit_stiffness))
            tau = meta.models[axis].predict(np.vstack(rows))[:, 0]
            start = 0
            for idx, u, uc, k in parts:
                t = tau[start : start + u.size] - k * (u - uc)
                start += u.size
                out[:, idx] = t.reshape(U.shape[0], idx.size)
        return out

    def residual(self, q: np.ndarray) -> np.ndarray:
        q2 = q[None, :]
        return (self.law_efforts(q2) + _load_efforts(self.chain, self.load, q2, self.mass_w))[0]

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        n = q.size
        h = self.cfg.fd_step
        # law part is diagonal: one batched pass at q +- h
        pm = np.stack([q + h, q - h])
        lt = self.law_efforts(pm)
        diag = (lt[0] - lt[1]) / (2 * h)
        E = np.eye(n) * h
        Qs = np.concatenate([q + E, q - E])
        loads = _load_efforts(self.chain, self.load, Qs, self.mass_w)
        Jl = (loads[:n] - loads[n:]).T / (2 * h)
        return Jl + np.diag(diag)

    def clamp_events(self, q: np.ndarray) -> list:
        events = []
        dof = self.chain.dof_per_joint
        for law, axis, idx, p in self.blocks:
            _, p_c, u_c = law.effort(axis, p, q[idx])
            if p_c.any():
                lo, hi = law.operating_range[axis]["p"]
                events.append({"kind": "p", "axis": axis, "value": float(p), "bound": float(lo if p < lo else hi)})
            for i in np.nonzero(u_c)[0]:
                lo, hi = law.operating_range[axis]["u"]
                u = float(q[idx[i]])
                events.append(
                    {"kind": "u", "joint": int(idx[i] // dof), "axis": axis, "value": u, "bound": lo if u < lo else hi}
                )
        return events

    def initial_guess(self) -> np.ndarray:
        q0 = np.empty(self.chain.n_dof)
        cache = {}
        for law, axis, idx, p in self.blocks:
            key = (id(law), axis, float(p))
            if key not in cache:
                cache[key] = law.natural_deflection(axis, p)
            q0[idx] = cache[key]
        return q0


def _finish(problem: _Problem, q, rnorm, it, converged, message) -> EquilibriumState:
    return EquilibriumState(
        q=np.array(q),
        residual_norm=float(rnorm),
        clamp_events=problem.clamp_events(q),
        centerline=centerline(problem.chain, q),
        iterations=it,
        converged=converged,
        message=message,
    )


def solve_equilibrium(
    chain: ChainSpec,
    load: LoadCase,
    cfg: SolverConfig | None = None,
    q0=None,
) -> EquilibriumState:
    """Damped Newton with Armijo backtracking on ``0.5*|r|^2``.

    Starts from ``q0`` or the natural (free-loading) deflection of every joint.
    Raises NonConvergence carrying the best iterate; warns ClampSaturation when
    a joint ends beyond its sampled deflection range.
    """
    cfg = cfg or SolverConfig()
    prob = _Problem(chain, load, cfg)
    q = prob.initial_guess() if q0 is None else np.array(q0, dtype=float)
    if q.shape != (chain.n_dof,):
        raise ValidationError(f"q0 must have {chain.n_dof} entries")
    r = prob.residual(q)
    rn = float(np.linalg.norm(r))
    best_q, best_rn = q.copy(), rn
    it = 0
    converged = rn <= cfg.tol
    while not converged and it < cfg.max_iterations:
        it += 1
        J = prob.jacobian(q)
        try:
            dq = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dq = np.linalg.lstsq(J, -r, rcond=None)[0]
        grad = J.T @ r
        merit = 0.5 * rn * rn
        accepted = False
        for direction in (dq, -grad):
            slope = float(grad @ direction)
            if not np.all(np.isfinite(direction)) or slope >= 0:
                continue
            t = 1.0
            for _ in range(cfg.max_halvings + 1):
                qn = q + t * direction
                rn_vec = prob.residual(qn)
                rnn = float(np.linalg.norm(rn_vec))
                if math.isfinite(rnn) and 0.5 * rnn * rnn <= merit + cfg.armijo * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            break
        q, r, rn = qn, rn_vec, rnn
        if rn < best_rn:
            best_q, best_rn = q.copy(), rn
        converged = rn <= cfg.tol

    if converged:
        # one polishing step; kept only if it helps
        try:
            qp = q + np.linalg.solve(prob.jacobian(q), -r)
            rp = float(np.linalg.norm(prob.residual(qp)))
            if rp < rn:
                q, rn = qp, rp
        except np.linalg.LinAlgError:
            pass
        state = _finish(prob, q, rn, it, True, "converged")
    else:
        state = _finish(prob, best_q, best_rn, it, False, "line search failed" if it < cfg.max_iterations else "iteration cap")
        raise NonConvergence(
            f"equilibrium not reached after {it} iterations (residual {best_rn:.3e} N*m)", state
        )

    if cfg.warn_on_clamp and any(e["kind"] == "u" for e in state.clamp_events):
        n = sum(e["kind"] == "u" for e in state.clamp_events)
        warnings.warn(f"{n} joint coordinate(s) pinned beyond the operating range", ClampSaturation, stacklevel=2)
    return state


def residual_norm(chain: ChainSpec, load: LoadCase, q) -> float:
    """Fresh recomputation of the equilibrium residual norm at ``q``."""
    prob = _Problem(chain, load, SolverConfig())
    return float(np.linalg.norm(prob.residual(np.asarray(q, dtype=float))))


def sweep_loadcases(chain: ChainSpec, loads, cfg: SolverConfig | None = None, warm_start: bool = True) -> list:
    """Solve each case in order, warm-starting from the previous solution.

    Failed cases come back as their best non-converged state instead of
    aborting the sweep.
    """
    loads = list(loads)
    if not loads:
        raise ValidationError("load case list is empty")
    out = []
    prev = None
    for load in loads:
        try:
            state = solve_equilibrium(chain, load, cfg, q0=prev if warm_start else None)
        except NonConvergence as exc:
            state = exc.state
        out.append(state)
        if state.converged:
            prev = state.q
    return out


# ---------------------------------------------------------------------------------
# files


def write_state_csv(chain: ChainSpec, state: EquilibriumState, path) -> Path:
    """Joint coordinates followed by centerline points in one table."""
    path = Path(path)
    dof = chain.dof_per_joint
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "index", "axis", "value", "x", "y", "z"])
        for i, v in enumerate(state.q):
            w.writerow(["q", i // dof, chain.axes[i % dof], repr(float(v)), "", "", ""])
        for i, pt in enumerate(state.centerline.points):
            w.writerow(["point", i, "", "", *(repr(float(c)) for c in pt)])
    return path


def read_centerline_csv(path) -> Curve3:
    pts = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["record"] == "point":
                pts.append([float(row["x"]), float(row["y"]), float(row["z"])])
    return Curve3(np.array(pts))


def chain_to_dict(chain: ChainSpec, law_refs: dict | None = None) -> dict:
    """Manifest; laws are referenced through ``law_refs`` (id(law) -> file) or embedded."""
    law_refs = law_refs or {}
    segs = []
    for s in chain.segments:
        entry = {"n": s.n, "phi": s.phi, "design": s.design.as_dict()}
        ref = law_refs.get(id(s.law))
        if ref is not None:
            entry["law_file"] = str(ref)
        else:
            entry["law"] = s.law.to_dict()
        segs.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "type": "chain",
        "joint_type": chain.joint_type,
        "axis_order": list(chain.axes),
        "joint_offset": chain.joint_offset,
        "link_masses": list(chain.link_masses),
        "base_rotation": chain.base_rotation.tolist(),
        "base_position": list(chain.base_position),
        "gravity": list(chain.gravity),
        "segments": segs,
    }


def chain_from_dict(data: dict, base_dir=".") -> ChainSpec:
    if data.get("type") != "chain":
        raise ValidationError("not a chain manifest")
    cache: dict = {}
    segs = []
    for entry in data["segments"]:
        if "law_file" in entry:
            ref = entry["law_file"]
            if ref not in cache:
                cache[ref] = JointLaw.from_dict(json.loads((Path(base_dir) / ref).read_text(encoding="utf-8")))
            law = cache[ref]
        else:
            law = JointLaw.from_dict(entry["law"])
        segs.append(SegmentSpec(entry["n"], ModuleDesign(**entry["design"]), law, entry.get("phi", 0.0)))
    return ChainSpec(
        tuple(segs),
        data["joint_type"],
        link_masses=tuple(data["link_masses"]),
        base_rotation=np.array(data["base_rotation"]),
        base_position=tuple(data["base_position"]),
        gravity=tuple(data["gravity"]),
        joint_offset=data.get("joint_offset", 0.5),
    )


def save_chain(chain: ChainSpec, path) -> Path:
    """Write the chain manifest plus one JSON file per distinct joint law."""
    path = Path(path)
    refs = {}
    for s in chain.segments:
        if id(s.law) not in refs:
            name = f"{path.stem}_law{len(refs)}.json"
            (path.parent / name).write_text(json.dumps(s.law.to_dict()) + "\n", encoding="utf-8")
            refs[id(s.law)] = name
    path.write_text(json.dumps(chain_to_dict(chain, refs), indent=2) + "\n", encoding="utf-8")
    return path


def load_chain(path) -> ChainSpec:
    path = Path(path)
    return chain_from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)
