"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even without ``-s``.
"""

import math
import time

import numpy as np
import pytest

from softprbm.core import Curve3, ModuleDesign, rot_x, rot_y, rot_z
from softprbm.metamodel import build_family, fit_behavior_metamodel, fit_coeff_metamodel, instantiate
from softprbm.mlp import MlpSpec, TrainConfig, gradient_check, train
from softprbm.optimize import CmaConfig, minimize
from softprbm.oracle import GroundTruthLaw, generate_samples
from softprbm.polyfit import FitConfig, PolySurrogate, fit_poly_surrogate, fit_quality
from softprbm.prbm import (
    DEFAULT_GRAVITY,
    ChainSpec,
    JointLaw,
    LoadCase,
    SegmentSpec,
    centerline,
    solve_equilibrium,
    sweep_loadcases,
)
from softprbm.shapematch import (
    ActuatorDesign,
    BalanceConfig,
    ShapeMatchConfig,
    TargetShape,
    enumerate_structures,
    helix_target,
    meta_law_factory,
    optimize_design,
    refit_and_verify,
    simulate_design,
)
from support import (
    BELLOW_GRID,
    DESIGN,
    HELIX_CONSTRAINT,
    HELIX_FAMILY,
    HELIX_FIXED,
    HELIX_GRIDS,
    HELIX_VARYING,
    bisect,
    brute_force_minimum,
    planar_chain_energy,
    run_pipeline,
)

BELLOW_LAW = (0.002, 0.1, 0.05, 0.0, 0.004)
HELIX_TRAIN = TrainConfig(max_iterations=8000, batch_size=512, learning_rate=3e-3, lr_schedule="cosine", min_learning_rate=1e-5)


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return report


@pytest.fixture(scope="module")
def helix_meta():
    t0 = time.perf_counter()
    fam = build_family(HELIX_VARYING, HELIX_FIXED, HELIX_CONSTRAINT)
    sets = [{a: generate_samples(HELIX_FAMILY.law(a, d), HELIX_GRIDS[a], d) for a in ("y", "x", "z")} for d in fam.designs]
    meta = fit_behavior_metamodel(fam, sets, HELIX_TRAIN, hidden=(64, 64))
    return meta, time.perf_counter() - t0


def test_criterion_01_polynomial_round_trip(verdict):
    t0 = time.perf_counter()
    err = norm = 0.0
    for law in (BELLOW_LAW, (2.0, 1.0, 3.0, 0.0, 5.0)):
        s = generate_samples(GroundTruthLaw("separable_linear", law), BELLOW_GRID, DESIGN)
        sur = fit_poly_surrogate(s)
        err = max(err, float(np.max(np.abs(np.array(sur.coefficients()) - law))))
        norm = max(norm, fit_quality(sur, s).max_normalized)
    dt = time.perf_counter() - t0
    ok = err <= 1e-6 and norm <= 1e-6 and dt < 1.0
    assert verdict(1, ok, f"coef_err={err:.2e} max_normalized={norm:.2e} t={dt:.2f}s")


def test_criterion_02_derivative_consistency(verdict):
    t0 = time.perf_counter()
    s = generate_samples(GroundTruthLaw("nonseparable", (0.002, 0.1, 0.05, 0.01, 0.004)), BELLOW_GRID, DESIGN)
    surs = [
        fit_poly_surrogate(generate_samples(GroundTruthLaw("separable_linear", BELLOW_LAW), BELLOW_GRID, DESIGN)),
        fit_poly_surrogate(s, FitConfig(ka_degree=2, ke_degree=2)),
        PolySurrogate((0.7, -0.2, 0.03), (0.0, 1.1, -0.4), (0.0, 0.5, 0.02)),
    ]
    rng = np.random.default_rng(0)
    p = rng.uniform(0.0, 15.0, 1000)
    u = rng.uniform(-1.0, 1.0, 1000)
    worst = 0.0
    for sur in surs:
        h = 1e-5
        fd = (sur.eval(p, u + h) - sur.eval(p, u - h)) / (2 * h)
        an = sur.d_du(p, u)
        worst = max(worst, float(np.max(np.abs(an - fd) / np.maximum(np.abs(fd), 1e-12))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 1.0
    assert verdict(2, ok, f"max_rel_dev={worst:.2e} over {len(surs)} surrogates t={dt:.2f}s")


def test_criterion_03_mlp_surrogate_quality(verdict):
    t0 = time.perf_counter()
    s = generate_samples(GroundTruthLaw("separable_linear", BELLOW_LAW), BELLOW_GRID, DESIGN)
    x, y = s.training_pairs()
    cfg = TrainConfig(max_iterations=4000, learning_rate=3e-3, lr_schedule="cosine")
    _, hist = train(MlpSpec(2, (64, 64), 1, seed=0), x, y, cfg)
    dt = time.perf_counter() - t0
    ok = hist.holdout_r2 >= 0.999 and dt < 60.0
    assert verdict(3, ok, f"holdout_r2={hist.holdout_r2:.6f} t={dt:.1f}s")


def test_criterion_04_mlp_gradient_check(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(32, 2))
    y = np.sin(x[:, :1]) * x[:, 1:]
    model, _ = train(MlpSpec(2, (64, 64), 1, seed=2), x, y, TrainConfig(max_iterations=50))
    dev = gradient_check(model, x, y)
    dt = time.perf_counter() - t0
    ok = dev <= 1e-4 and dt < 5.0
    assert verdict(4, ok, f"max_rel_dev={dev:.2e} t={dt:.2f}s")


def _smooth_law(d):
    return GroundTruthLaw("separable_linear", (0.0002 * d.R * d.l, 0.002 * d.R, 0.001 * d.l, 0.0, 0.0005 * d.l))


def test_criterion_05_coefficient_metamodel(verdict):
    t0 = time.perf_counter()
    fam = build_family({"R": [5.0, 5.5, 6.0, 6.5], "l": [4.0, 5.0, 6.0, 7.0]}, {"r": 3.0, "t": 1.5}, "true")
    surs = [fit_poly_surrogate(generate_samples(_smooth_law(d), BELLOW_GRID, d)) for d in fam.designs]
    meta = fit_coeff_metamodel(fam, surs, TrainConfig(max_iterations=3000, learning_rate=1e-3, holdout_fraction=0.0))

    def rel_err(d, ref):
        got = np.array(instantiate(meta, d).coefficients())
        ref = np.array(ref.coefficients())
        nz = ref != 0
        return float(np.max(np.abs(got[nz] - ref[nz]) / np.abs(ref[nz])))

    train_err = max(rel_err(d, s) for d, s in zip(fam.designs, surs))
    unseen = [ModuleDesign(3.0, R, l, 1.5) for R, l in ((5.25, 4.5), (5.75, 5.5), (6.25, 6.5))]
    unseen_err = max(rel_err(d, fit_poly_surrogate(generate_samples(_smooth_law(d), BELLOW_GRID, d))) for d in unseen)
    r2 = meta.report["r2_pooled"]
    dt = time.perf_counter() - t0
    ok = r2 >= 0.99 and train_err <= 0.05 and unseen_err <= 0.05 and dt < 120.0
    assert verdict(5, ok, f"r2_pooled={r2:.6f} rel_err_train={train_err:.4f} rel_err_unseen={unseen_err:.4f} t={dt:.1f}s")


@pytest.mark.slow
def test_criterion_06_behavior_metamodel(verdict, helix_meta):
    meta, dt = helix_meta
    r2 = {a: meta.report[a]["holdout_r2"] for a in meta.axes}
    ok = all(v >= 0.999 for v in r2.values()) and len(meta.family.designs) == 24 and dt < 120.0
    detail = " ".join(f"r2_{a}={v:.5f}" for a, v in r2.items())
    assert verdict(6, ok, f"{detail} designs={len(meta.family.designs)} t={dt:.1f}s")


def test_criterion_07_equilibrium_correctness(verdict):
    t0 = time.perf_counter()
    # pendulum: 0.1 kg point mass at 50 mm on a 1 N*m/rad joint, arm horizontal
    law = JointLaw.poly(PolySurrogate.from_coefficients(0, 1, 0, 0, 0, operating_range={"p": [0, 1], "u": [-1, 1]}))
    pend = ChainSpec((SegmentSpec(1, ModuleDesign(1, 2, 100, 1), law),), link_masses=(0.1,), base_rotation=rot_y(math.pi / 2), joint_offset=0.0)
    q_pend = solve_equilibrium(pend, LoadCase(p=0.0)).q[0]
    ref = bisect(lambda q: q - 0.1 * 9.81 * 0.05 * math.cos(q), 0.0, 1.0)
    e_pend = abs(q_pend - ref)

    m_a, b_a, m_e, k_n, p = 0.01, 0.3, 0.2, 0.02, 2.0
    sur = PolySurrogate.from_coefficients(m_a, b_a, m_e, 0.0, k_n, operating_range={"p": [0, 5], "u": [-2, 2]})
    masses, tip = (0.08, 0.05, 0.03), 0.02
    chain3 = ChainSpec((SegmentSpec(3, ModuleDesign(3, 6, 40, 1.5), JointLaw.poly(sur)),), link_masses=masses,
                       base_rotation=rot_y(math.pi / 2), joint_offset=0.0)
    q3 = solve_equilibrium(chain3, LoadCase(p=p, tip_mass=tip)).q
    K = m_a * p + b_a
    points = [(i, 0.5, m) for i, m in enumerate(masses)] + [(2, 1.0, tip)]
    ref3 = brute_force_minimum(
        lambda q: planar_chain_energy(q, [0.04] * 3, lambda v: float(np.sum(K * v**2 / 2 + m_e * v**3 / 6 - k_n * p * v)), points),
        np.zeros(3),
    )
    e3 = float(np.max(np.abs(q3 - ref3)))

    axes = ("y", "x", "z")
    surs = {a: PolySurrogate.from_coefficients(0.02, 0.05, 0.03, 0.0, 0.01 if a != "x" else 0.0, axis_label=a) for a in axes}
    slaw = JointLaw.poly(surs, {a: {"p": [0.0, 10.0], "u": [-2.0, 2.0]} for a in axes})
    segs = (SegmentSpec(2, DESIGN, slaw), SegmentSpec(3, DESIGN, slaw, phi=0.7))
    Q = rot_z(0.3) @ rot_x(1.1) @ rot_y(-0.4)
    shift = np.array([1.0, -2.0, 3.0])
    a = solve_equilibrium(ChainSpec(segs, "spherical", link_masses=(0.05,) * 5), LoadCase(p=5, tip_force=(0.1, 0, 0)))
    b = solve_equilibrium(
        ChainSpec(segs, "spherical", link_masses=(0.05,) * 5, base_rotation=Q, base_position=tuple(shift), gravity=tuple(Q @ np.array(DEFAULT_GRAVITY))),
        LoadCase(p=5, tip_force=tuple(Q @ [0.1, 0, 0])),
    )
    e_obj = float(np.max(np.abs(a.centerline.points @ Q.T + shift - b.centerline.points)))
    dt = time.perf_counter() - t0
    ok = e_pend <= 1e-6 and e3 <= 1e-4 and e_obj <= 1e-9 and dt < 10.0
    assert verdict(7, ok, f"pendulum_err={e_pend:.1e}rad chain3_err={e3:.1e}rad objectivity_err={e_obj:.1e}mm t={dt:.2f}s")


def test_criterion_08_load_sweep_monotone(verdict):
    t0 = time.perf_counter()
    sur = PolySurrogate.from_coefficients(0.002, 0.1, 0.05, 0.0, 0.004, operating_range={"p": [0, 15], "u": [-1, 2]})
    chain = ChainSpec((SegmentSpec(6, DESIGN, JointLaw.poly(sur)),), link_masses=(0.005,) * 6, base_rotation=rot_y(math.pi / 2))
    grams = (0, 10, 20, 50)
    states = sweep_loadcases(chain, [LoadCase(p=5.0, tip_mass=g * 1e-3) for g in grams])
    rest = centerline(chain, np.zeros(chain.n_dof)).points[-1]
    defl = [float(np.linalg.norm(s.tip - rest)) for s in states]
    dt = time.perf_counter() - t0
    ok = all(s.converged for s in states) and bool(np.all(np.diff(defl) > 0)) and dt < 10.0
    text = " ".join(f"{g}g={d:.2f}mm" for g, d in zip(grams, defl))
    assert verdict(8, ok, f"{text} t={dt:.2f}s")


def test_criterion_09_cma_benchmarks(verdict):
    t0 = time.perf_counter()
    sphere = CmaConfig(bounds=[(-5, 5)] * 10, max_iterations=10000, target_value=1e-8, seed=0)
    rs = minimize(lambda x: float(np.sum((x - 1.7) ** 2)), sphere)

    def rosen(x):
        return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))

    def rosen_run(seed):
        cfg = CmaConfig(bounds=[(-2, 2)] * 5, max_iterations=100000, target_value=1e-10, max_evaluations=30000, seed=seed)
        return minimize(rosen, cfg)

    # a single run can settle in the local minimum near (-1, 1, 1, 1, 1), so the
    # benchmark is scored over a fixed seed set
    runs = [rosen_run(seed) for seed in range(100)]
    hits = [r.best_f <= 1e-4 and np.max(np.abs(r.best_x - 1.0)) <= 1e-2 and r.evaluations <= 30000 for r in runs]
    again = rosen_run(1)
    same = np.array_equal(again.best_x, runs[1].best_x) and again.history == runs[1].history
    dt = time.perf_counter() - t0
    ok = rs.best_f <= 1e-8 and rs.evaluations <= 5000 and sum(hits) >= 85 and same and dt < 30.0
    assert verdict(
        9,
        ok,
        f"sphere f={rs.best_f:.1e} evals={rs.evaluations} rosenbrock success={sum(hits)}/100 "
        f"(seed 0: f={runs[0].best_f:.3g} {runs[0].stop_reason}) deterministic={same} t={dt:.1f}s",
    )


@pytest.mark.slow
def test_criterion_10_shapematch_round_trip(verdict, helix_meta):
    meta, _ = helix_meta
    t0 = time.perf_counter()
    cfg = ShapeMatchConfig(seed=0, stop_threshold=0.3, max_iterations=200)
    true = ActuatorDesign((5, 5), (6.0, 6.5), (5.0, 4.6), (0.0, 0.8), 8.0, 3.0, 1.5)
    target = TargetShape(Curve3(simulate_design(true, meta_law_factory(meta), cfg).centerline.points))
    cands = enumerate_structures(target, 2, (4, 6), BalanceConfig(max_spread=2, n_totals=3))
    res = optimize_design(target, cands, meta, cfg)
    dt = time.perf_counter() - t0
    ok = len(cands) <= 9 and res.best.rmse <= 0.5 and res.best.e_max <= 1.0 and dt < 300.0
    label = res.leaderboard[0].candidate.label()
    assert verdict(10, ok, f"candidates={len(cands)} best={label} rmse={res.best.rmse:.3f}mm e_max={res.best.e_max:.3f}mm t={dt:.0f}s")


@pytest.mark.slow
def test_criterion_11_helix_threshold(verdict, helix_meta):
    meta, t_meta = helix_meta
    t0 = time.perf_counter()
    target = helix_target(18.0, 60.0)
    cands = enumerate_structures(target, 4, (4, 6), BalanceConfig(max_spread=1, n_totals=3))
    res = optimize_design(target, cands, meta, ShapeMatchConfig(seed=0))
    rr = refit_and_verify(res.best, target, HELIX_FAMILY, HELIX_GRIDS)
    dt = time.perf_counter() - t0 + t_meta
    ok = res.best.rmse < 5.0 and res.best.e_max < 5.0 and rr.rmse_drift <= 0.5 and dt < 900.0
    label = res.leaderboard[0].candidate.label()
    converged = sum(c.status == "converged" for c in res.leaderboard)
    assert verdict(
        11,
        ok,
        f"candidates={len(cands)} converged={converged} best={label} rmse={res.best.rmse:.2f}mm "
        f"e_max={res.best.e_max:.2f}mm refit_drift={rr.rmse_drift:.3f}mm t={dt:.0f}s",
    )


def test_criterion_12_end_to_end_determinism(verdict, tmp_path):
    from softprbm.cli import main
    from softprbm.manifest import MANIFEST_NAME, RunManifest

    dirs = run_pipeline(tmp_path / "run")
    problems = []
    for name, d in dirs.items():
        out = tmp_path / "replay" / name
        code = main(["replay", str(d), "--out", str(out)])
        if code != 0:
            problems.append(f"{name}: exit {code}")
            continue
        for f in RunManifest.load(d / MANIFEST_NAME).outputs:
            if (out / f).read_bytes() != (d / f).read_bytes():
                problems.append(f"{name}/{f}")
    ok = not problems
    assert verdict(12, ok, f"commands={len(dirs)} differences={len(problems)} {' '.join(problems)}".rstrip())
