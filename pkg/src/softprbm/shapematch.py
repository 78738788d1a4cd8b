"""Shape-matching co-design over segmented spherical-joint chains.

A structure fixes the module count of each segment. For every structure the
continuous variables ``(R_i, l_i, phi_2..phi_N, p)`` are tuned by CMA-ES so the
simulated centerline matches a target curve under arc-length correspondence.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Curve3, ModuleDesign, ValidationError
from .metamodel import BehaviorMetaModel
from .optimize import CmaConfig, CmaResult, minimize_batch, write_trace_csv
from .prbm import (
    ChainSpec,
    ClampSaturation,
    JointLaw,
    LoadCase,
    NonConvergence,
    SegmentSpec,
    SolverConfig,
    solve_equilibrium,
)

TWO_PI = 2.0 * math.pi


class DegenerateCurve(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class InfeasibleBounds(ValidationError):
    pass


# ---------------------------------------------------------------------------------
# targets


@dataclass(frozen=True, eq=False)
class TargetShape:
    """Target centerline with an optional analytic descriptor.

    For helices the descriptor lets resampling use the exact arc-length
    parameterization instead of the polyline.
    """

    curve: Curve3
    descriptor: dict | None = None
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: tuple = (0.0, 0.0, 0.0)

    @property
    def length(self) -> float:
        if self.descriptor and self.descriptor.get("type") == "helix":
            return _helix_length(self.descriptor)
        return self.curve.length

    def at(self, s) -> np.ndarray:
        """Points at normalized arc length ``s`` in [0, 1]."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        if self.descriptor and self.descriptor.get("type") == "helix":
            local = _helix_local(self.descriptor, s)
            return local @ np.asarray(self.rotation).T + np.asarray(self.position)
        pts = self.curve.points
        cum = self.curve.normalized_arclength()
        return np.column_stack([np.interp(s, cum, pts[:, k]) for k in range(3)])

    def to_dict(self) -> dict:
        if self.descriptor:
            return {
                **self.descriptor,
                "base_rotation": np.asarray(self.rotation).tolist(),
                "base_position": list(self.position),
            }
        return {"type": "points", "points": self.curve.points.tolist()}


def _helix_params(desc: dict):
    a = float(desc["radius"])
    turns = float(desc.get("turns", 1.0))
    c = float(desc["height"]) / (TWO_PI * turns)
    sign = 1.0 if desc.get("handedness", "right") == "right" else -1.0
    return a, c, turns, sign


def _helix_length(desc: dict) -> float:
    a, c, turns, _ = _helix_params(desc)
    return TWO_PI * turns * math.hypot(a, c)


def _helix_local(desc: dict, s: np.ndarray) -> np.ndarray:
    """Helix in its canonical frame: starts at the origin heading +z, curving toward +x."""
    a, c, turns, sign = _helix_params(desc)
    t = np.asarray(s, dtype=float) * TWO_PI * turns
    raw = np.column_stack([a * np.cos(t), sign * a * np.sin(t), c * t])
    tangent = np.array([0.0, sign * a, c]) / math.hypot(a, c)
    normal = np.array([-1.0, 0.0, 0.0])
    binormal = np.cross(tangent, normal)
    frame = np.vstack([normal, binormal, tangent])  # rows: local x, y, z
    return (raw - np.array([a, 0.0, 0.0])) @ frame.T


def helix_target(
    radius: float = 18.0,
    height: float = 60.0,
    turns: float = 1.0,
    handedness: str = "right",
    n_points: int = 401,
    base_rotation=None,
    base_position=(0.0, 0.0, 0.0),
) -> TargetShape:
    if radius <= 0 or height <= 0 or turns <= 0:
        raise ValidationError("helix radius, height and turns must be positive")
    if handedness not in ("right", "left"):
        raise ValidationError("handedness must be 'right' or 'left'")
    if n_points < 2:
        raise ValidationError("need at least two helix points")
    desc = {"type": "helix", "radius": float(radius), "height": float(height), "turns": float(turns), "handedness": handedness}
    rot = np.eye(3) if base_rotation is None else np.asarray(base_rotation, dtype=float)
    pos = tuple(float(v) for v in base_position)
    s = np.linspace(0.0, 1.0, n_points)
    pts = _helix_local(desc, s) @ rot.T + np.asarray(pos)
    return TargetShape(Curve3(pts), desc, rot, pos)


def target_from_dict(data: dict) -> TargetShape:
    kind = data.get("type")
    if kind == "helix":
        return helix_target(
            data["radius"],
            data["height"],
            data.get("turns", 1.0),
            data.get("handedness", "right"),
            int(data.get("n_points", 401)),
            data.get("base_rotation"),
            tuple(data.get("base_position", (0.0, 0.0, 0.0))),
        )
    if kind == "points":
        return TargetShape(Curve3(np.asarray(data["points"], dtype=float)))
    raise ValidationError(f"unknown target type {kind!r}")


def resample_target(target, simulated: Curve3) -> Curve3:
    """Target points at the simulated curve's normalized arc-length stations."""
    if simulated.length <= 0.0:
        raise DegenerateCurve("simulated curve has zero length")
    if isinstance(target, Curve3):
        target = TargetShape(target)
    if target.length <= 0.0:
        raise DegenerateCurve("target curve has zero length")
    s = simulated.normalized_arclength()
    pts = target.at(s)
    pts[0] = target.at(0.0)[0]
    pts[-1] = target.at(1.0)[0]
    return Curve3(pts)


def match_metrics(simulated: Curve3, resampled: Curve3) -> tuple[float, float]:
    a = np.asarray(simulated.points)
    b = np.asarray(resampled.points)
    if a.shape != b.shape:
        raise LengthMismatch(f"point counts differ: {a.shape[0]} vs {b.shape[0]}")
    d = np.linalg.norm(a - b, axis=1)
    return float(np.sqrt(np.mean(d**2))), float(np.max(d))


# ---------------------------------------------------------------------------------
# structures


@dataclass(frozen=True)
class StructuralCandidate:
    n: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if not n or any(v < 1 for v in n):
            raise ValidationError("module counts must be positive")
        object.__setattr__(self, "n", n)

    @property
    def N(self) -> int:
        return len(self.n)

    @property
    def total(self) -> int:
        return sum(self.n)

    def label(self) -> str:
        return "-".join(str(v) for v in self.n)


@dataclass(frozen=True)
class BalanceConfig:
    """``max_spread`` bounds ``max(n) - min(n)`` (default ``ceil(total/N)``);
    ``per_total_cap`` subsamples each total's compositions evenly."""

    max_spread: int | None = None
    per_total_cap: int | None = None
    n_totals: int = 5

    def spread(self, total: int, N: int) -> int:
        return self.max_spread if self.max_spread is not None else math.ceil(total / N)

    def as_dict(self) -> dict:
        return {"max_spread": self.max_spread, "per_total_cap": self.per_total_cap, "n_totals": self.n_totals}


def total_bounds(length: float, l_range) -> tuple[int, int]:
    l_min, l_max = (float(v) for v in l_range)
    if not (0 < l_min <= l_max):
        raise ValidationError("module length range must be positive with l_min <= l_max")
    if l_min == l_max:
        n = max(1, round(length / l_min))
        return n, n
    return math.ceil(length / l_max - 1e-9), math.floor(length / l_min + 1e-9)


def candidate_totals(length: float, l_range, n_totals: int = 5) -> list[int]:
    lo, hi = total_bounds(length, l_range)
    if lo > hi:
        raise InfeasibleBounds(f"no integer module total fits length {length:.3f} mm in {l_range}")
    if lo == hi:
        return [lo]
    centre = round(0.5 * (lo + hi))
    half = n_totals // 2
    totals = [t for t in range(centre - half, centre - half + n_totals) if lo <= t <= hi]
    return totals


def _compositions(total: int, N: int, spread: int):
    # lexicographic, every part >= 1
    for cuts in itertools.combinations(range(1, total), N - 1):
        parts = np.diff((0, *cuts, total))
        if parts.max() - parts.min() <= spread:
            yield tuple(int(v) for v in parts)


def enumerate_structures(target, N: int, l_range, balance_cfg: BalanceConfig | None = None, max_total=None) -> list:
    """Candidate structures for ``N`` segments, ordered by total then composition."""
    if N < 1:
        raise ValidationError("N must be at least 1")
    cfg = balance_cfg or BalanceConfig()
    length = target.length if hasattr(target, "length") else float(target)
    lo, hi = total_bounds(length, l_range)
    if max_total is not None and lo > max_total:
        raise InfeasibleBounds(f"at least {lo} modules needed, cap is {max_total}")
    out = []
    for total in candidate_totals(length, l_range, cfg.n_totals):
        if total < N:
            continue
        comps = list(_compositions(total, N, cfg.spread(total, N)))
        if cfg.per_total_cap is not None and len(comps) > cfg.per_total_cap:
            pick = np.unique(np.round(np.linspace(0, len(comps) - 1, cfg.per_total_cap)).astype(int))
            comps = [comps[i] for i in pick]
        out.extend(StructuralCandidate(c) for c in comps)
    if not out:
        raise InfeasibleBounds("no structure satisfies the bounds and balance rule")
    return out


# ---------------------------------------------------------------------------------
# designs and optimization


@dataclass(frozen=True)
class ActuatorDesign:
    n: tuple
    R: tuple
    l: tuple
    phi: tuple  # phi[0] == 0
    p: float
    r: float
    t: float

    def modules(self) -> list:
        return [ModuleDesign(self.r, R, l, self.t) for R, l in zip(self.R, self.l)]

    def as_dict(self) -> dict:
        return {
            "n": list(self.n),
            "R": list(self.R),
            "l": list(self.l),
            "phi": list(self.phi),
            "p": self.p,
            "r": self.r,
            "t": self.t,
        }

    @classmethod
    def from_dict(cls, data) -> "ActuatorDesign":
        return cls(tuple(data["n"]), tuple(data["R"]), tuple(data["l"]), tuple(data["phi"]), data["p"], data["r"], data["t"])


@dataclass(frozen=True)
class ShapeMatchConfig:
    """Settings for ``optimize_design``.

    Bounds default to the meta-model family hull (R, l) and its sampled
    actuation range (p). ``stop_threshold`` (mm) drives both early stopping and
    the e_max penalty of the scalar objective.
    """

    sigma0: float = 0.3
    max_iterations: int = 60
    stop_threshold: float = 5.0
    emax_weight: float = 0.25
    seed: int = 0
    population: int | None = None
    R_bounds: tuple | None = None
    l_bounds: tuple | None = None
    p_bounds: tuple | None = None
    gravity: tuple = (0.0, 0.0, -9.81)
    gravity_on: bool = True
    joint_offset: float = 0.5
    base_rotation: tuple | None = None
    base_position: tuple = (0.0, 0.0, 0.0)
    solver: SolverConfig = SolverConfig(tol=1e-8, max_iterations=60, warn_on_clamp=False)
    jobs: int = 1

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "solver"}
        d["solver"] = {k: getattr(self.solver, k) for k in self.solver.__dataclass_fields__}
        return json.loads(json.dumps(d, default=list))


def objective_value(rmse: float, e_max: float, cfg: ShapeMatchConfig) -> float:
    return rmse + cfg.emax_weight * max(0.0, e_max - cfg.stop_threshold)


def _bounds(meta: BehaviorMetaModel, cfg: ShapeMatchConfig):
    fam = meta.family
    lo, hi = fam.bounds()
    names = fam.names

    def hull(name):
        if name in names:
            i = names.index(name)
            return float(lo[i]), float(hi[i])
        v = fam.fixed[name]
        return v, v

    R_b = tuple(cfg.R_bounds) if cfg.R_bounds else hull("R")
    l_b = tuple(cfg.l_bounds) if cfg.l_bounds else hull("l")
    if cfg.p_bounds:
        p_b = tuple(cfg.p_bounds)
    else:
        p_b = (
            max(r["p"][0] for r in meta.operating_range.values()),
            min(r["p"][1] for r in meta.operating_range.values()),
        )
    return R_b, l_b, p_b


def decode(x, candidate: StructuralCandidate, r: float, t: float) -> ActuatorDesign:
    N = candidate.N
    x = np.asarray(x, dtype=float)
    R = tuple(float(v) for v in x[:N])
    l = tuple(float(v) for v in x[N : 2 * N])
    phi = (0.0, *(float(v) % TWO_PI for v in x[2 * N : 3 * N - 1]))
    return ActuatorDesign(candidate.n, R, l, phi, float(x[-1]), r, t)


def build_chain(design: ActuatorDesign, law_for, cfg: ShapeMatchConfig) -> ChainSpec:
    """``law_for(ModuleDesign) -> JointLaw`` supplies each segment's law."""
    segs = tuple(
        SegmentSpec(n, m, law_for(m), phi) for n, m, phi in zip(design.n, design.modules(), design.phi)
    )
    return ChainSpec(
        segs,
        "spherical",
        base_rotation=np.eye(3) if cfg.base_rotation is None else np.asarray(cfg.base_rotation),
        base_position=cfg.base_position,
        gravity=cfg.gravity,
        joint_offset=cfg.joint_offset,
    )


def simulate_design(design: ActuatorDesign, law_for, cfg: ShapeMatchConfig):
    chain = build_chain(design, law_for, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampSaturation)
        return solve_equilibrium(chain, LoadCase(p=design.p, gravity_on=cfg.gravity_on), cfg.solver)


def meta_law_factory(meta: BehaviorMetaModel):
    def law_for(d: ModuleDesign) -> JointLaw:
        return JointLaw.meta(meta, d, guard=False)

    return law_for


@dataclass(eq=False)
class MatchResult:
    rmse: float
    e_max: float
    design: ActuatorDesign
    simulated: Curve3
    resampled_target: Curve3
    objective: float = float("nan")

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "e_max": self.e_max, "objective": self.objective, "design": self.design.as_dict()}


def evaluate_design(design: ActuatorDesign, target: TargetShape, law_for, cfg: ShapeMatchConfig) -> MatchResult:
    state = simulate_design(design, law_for, cfg)
    res = resample_target(target, state.centerline)
    rmse, e_max = match_metrics(state.centerline, res)
    return MatchResult(rmse, e_max, design, state.centerline, res, objective_value(rmse, e_max, cfg))


@dataclass(eq=False)
class CandidateResult:
    index: int
    candidate: StructuralCandidate
    status: str
    match: MatchResult | None = None
    cma: CmaResult | None = None
    seed: int = 0
    failures: int = 0

    @property
    def sort_key(self):
        if self.match is None:
            return (math.inf, math.inf, self.index)
        return (self.match.rmse, self.match.e_max, self.index)


@dataclass(eq=False)
class ShapeMatchResult:
    best: MatchResult
    leaderboard: list
    config: dict

    def to_bundle(self, out_dir) -> dict:
        return write_bundle(self, out_dir)


def candidate_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def _run_candidate(args) -> CandidateResult:
    index, cand, target, meta, cfg = args
    law_for = meta_law_factory(meta)
    fam = meta.family
    r, t = fam.fixed.get("r"), fam.fixed.get("t")
    if r is None or t is None:
        raise ValidationError("shape matching needs r and t fixed in the design family")
    R_b, l_b, p_b = _bounds(meta, cfg)
    N = cand.N
    # phi searched on [-pi, pi] so 'no relative rotation' sits at the box centre; reported mod 2*pi
    bounds = [R_b] * N + [l_b] * N + [(-math.pi, math.pi)] * (N - 1) + [p_b]
    seed = candidate_seed(cfg.seed, index)
    ccfg = CmaConfig(tuple(bounds), cfg.sigma0, cfg.population, cfg.max_iterations, None, seed)
    best = {"match": None}
    failures = [0]

    def f_batch(xs):
        vals = []
        for x in xs:
            design = decode(x, cand, r, t)
            try:
                m = evaluate_design(design, target, law_for, cfg)
            except NonConvergence:
                failures[0] += 1
                vals.append(math.inf)
                continue
            vals.append(m.objective)
            cur = best["match"]
            if cur is None or m.objective < cur.objective:
                best["match"] = m
        return vals

    def done(_row):
        m = best["match"]
        return m is not None and m.rmse < cfg.stop_threshold and m.e_max < cfg.stop_threshold

    res = minimize_batch(f_batch, ccfg, callback=done)
    status = "ok" if best["match"] is not None else "failed"
    if status == "ok" and done(None):
        status = "converged"
    return CandidateResult(index, cand, status, best["match"], res, seed, failures[0])


def optimize_design(target: TargetShape, candidates, meta: BehaviorMetaModel, opt_cfg: ShapeMatchConfig | None = None):
    """Run CMA-ES per structural candidate; return the best match and the leaderboard.

    Leaderboard order is ``(rmse, e_max)`` ascending with the enumeration index
    as tie-break, so results do not depend on worker scheduling.
    """
    cfg = opt_cfg or ShapeMatchConfig()
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("candidate list is empty")
    jobs = [(i, c, target, meta, cfg) for i, c in enumerate(candidates)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_candidate, jobs))
    else:
        results = [_run_candidate(j) for j in jobs]
    board = sorted(results, key=lambda r: r.sort_key)
    if board[0].match is None:
        raise NonConvergence("no candidate produced a valid simulation")
    return ShapeMatchResult(board[0].match, board, cfg.as_dict())


# ---------------------------------------------------------------------------------
# verification with directly fitted laws


@dataclass(eq=False)
class RefitResult:
    meta: MatchResult
    refit: MatchResult
    rmse_drift: float
    e_max_drift: float
    laws: list

    def as_dict(self) -> dict:
        return {
            "meta": {"rmse": self.meta.rmse, "e_max": self.meta.e_max},
            "refit": {"rmse": self.refit.rmse, "e_max": self.refit.e_max},
            "rmse_drift": self.rmse_drift,
            "e_max_drift": self.e_max_drift,
        }


def refit_and_verify(
    best: MatchResult,
    target: TargetShape,
    law_family,
    grids: dict,
    cfg: ShapeMatchConfig | None = None,
    method: str = "poly",
    train_cfg=None,
) -> RefitResult:
    """Re-simulate ``best`` with laws fitted directly on fresh oracle data.

    ``law_family`` is an oracle LawFamily; ``grids`` maps axis -> SampleGrid.
    ``method`` is ``"poly"`` or ``"mlp"`` (hidden [64, 64]).
    """
    from .mlp import MlpSpec, TrainConfig, train
    from .oracle import generate_samples
    from .polyfit import fit_poly_surrogate

    cfg = cfg or ShapeMatchConfig()
    if method not in ("poly", "mlp"):
        raise ValidationError("method must be 'poly' or 'mlp'")
    cache = {}

    def law_for(d: ModuleDesign) -> JointLaw:
        key = (d.r, d.R, d.l, d.t)
        if key not in cache:
            models, ranges = {}, {}
            for axis in ("y", "x", "z"):
                s = generate_samples(law_family.law(axis, d), grids[axis], d)
                if method == "poly":
                    sur = fit_poly_surrogate(s)
                    models[axis] = sur
                    ranges[axis] = sur.operating_range
                else:
                    x, y = s.training_pairs()
                    m, _ = train(MlpSpec(2, (64, 64)), x, y, train_cfg or TrainConfig(max_iterations=1500))
                    models[axis] = m
                    ranges[axis] = {"p": [x[:, 0].min(), x[:, 0].max()], "u": [x[:, 1].min(), x[:, 1].max()]}
            cache[key] = JointLaw(method, models, ranges, d)
        return cache[key]

    refit = evaluate_design(best.design, target, law_for, cfg)
    return RefitResult(
        best,
        refit,
        abs(refit.rmse - best.rmse),
        abs(refit.e_max - best.e_max),
        [cache[k] for k in cache],
    )


# ---------------------------------------------------------------------------------
# result bundle


def write_centerlines_csv(match: MatchResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "s", "sim_x", "sim_y", "sim_z", "target_x", "target_y", "target_z"])
        s = match.simulated.normalized_arclength()
        for i, (a, b) in enumerate(zip(match.simulated.points, match.resampled_target.points)):
            w.writerow([i, repr(float(s[i])), *(repr(float(v)) for v in a), *(repr(float(v)) for v in b)])
    return path


def write_bundle(result: ShapeMatchResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    best = result.best
    files["best_design"] = out / "best_design.json"
    files["best_design"].write_text(json.dumps(best.as_dict(), indent=2) + "\n", encoding="utf-8")
    files["leaderboard"] = out / "leaderboard.csv"
    with files["leaderboard"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "index", "structure", "status", "rmse", "e_max", "objective", "evaluations", "seed"])
        for rank, c in enumerate(result.leaderboard):
            m = c.match
            w.writerow(
                [
                    rank,
                    c.index,
                    c.candidate.label(),
                    c.status,
                    repr(m.rmse) if m else "",
                    repr(m.e_max) if m else "",
                    repr(m.objective) if m else "",
                    c.cma.evaluations if c.cma else 0,
                    c.seed,
                ]
            )
    files["centerlines"] = write_centerlines_csv(best, out / "centerlines.csv")
    top = result.leaderboard[0]
    if top.cma is not None:
        files["trace"] = write_trace_csv(top.cma, out / "trace.csv")
    files["metrics"] = out / "metrics.json"
    summary = {
        "rmse": best.rmse,
        "e_max": best.e_max,
        "objective": best.objective,
        "n_candidates": len(result.leaderboard),
        "best_structure": top.candidate.label(),
        "config": result.config,
    }
    files["metrics"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return files
