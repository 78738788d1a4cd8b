"""Shared synthetic families and independent reference solvers for the tests."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from softprbm.core import ModuleDesign, SampleGrid
from softprbm.oracle import LawFamily

DESIGN = ModuleDesign(r=3.0, R=6.0, l=5.0, t=1.5)

# Bellow sampling grid: 0..15 kPa every 0.5, moments 0..0.02 N*m every 0.0006.
BELLOW_GRID = SampleGrid(0.0, 15.0, 0.5, 0.0, 0.02, 0.0006, "y")

# Smooth three-axis family used by the behavior meta-model and shape-matching tests.
HELIX_FAMILY = LawFamily(
    forms={"y": "separable_linear", "x": "separable_linear", "z": "separable_linear"},
    params={
        "y": {"a1": "0.002", "a0": "0.1*R/6", "e1": "0.05", "e0": "0", "c": "0.004*l/5"},
        "x": {"a1": "0.001", "a0": "0.15*R/6", "e1": "0.05", "e0": "0", "c": "0"},
        "z": {"a1": "0.001", "a0": "0.04+0.03*(R-5)", "e1": "0.02", "e0": "0", "c": "0.0014*l/5"},
    },
)
HELIX_GRIDS = {
    "y": SampleGrid(0.0, 15.0, 1.0, -0.02, 0.04, 0.004, "y"),
    "x": SampleGrid(0.0, 15.0, 1.0, -0.006, 0.006, 0.001, "x"),
    "z": SampleGrid(0.0, 15.0, 1.0, -0.004, 0.006, 0.0005, "z"),
}
HELIX_VARYING = {"R": [5.0, 5.5, 6.0, 6.5, 7.0], "l": [4.0, 4.5, 5.0, 5.5, 6.0]}
HELIX_FIXED = {"r": 3.0, "t": 1.5}
HELIX_CONSTRAINT = "R - r > l/3"


def bisect(f, lo, hi, tol=1e-14, max_iter=400):
    """Plain bisection; requires a sign change on [lo, hi]."""
    flo = f(lo)
    if flo == 0:
        return lo
    if np.sign(flo) == np.sign(f(hi)):
        raise ValueError("no sign change")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def planar_chain_energy(q, lengths, spring_energy, m_points, g=9.81):
    """Potential energy of a planar revolute chain held out sideways.

    The chain starts horizontal along +x and positive joint angles bend it
    toward -z; joint ``i`` sits at the start of link ``i``. ``spring_energy(q)``
    returns the stored joint energy. ``m_points`` are (link index, fraction
    along link, mass kg); lengths in m.
    """
    q = np.asarray(q, dtype=float)
    angle = np.cumsum(q)
    starts = np.zeros((len(lengths) + 1, 2))
    for i, L in enumerate(lengths):
        starts[i + 1] = starts[i] + L * np.array([math.cos(angle[i]), -math.sin(angle[i])])
    e = float(spring_energy(q))
    for link, frac, m in m_points:
        z = starts[link, 1] + frac * lengths[link] * -math.sin(angle[link])
        e += m * g * z
    return e


def brute_force_minimum(energy, q0):
    """Derivative-free energy minimum (Nelder-Mead, tight tolerances, restarted)."""
    from scipy.optimize import minimize

    q = np.asarray(q0, dtype=float)
    for _ in range(5):
        res = minimize(energy, q, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 200000, "maxfev": 200000})
        moved = float(np.max(np.abs(res.x - q)))
        q = res.x
        if moved < 1e-11:
            break
    return q


# --- command-line pipeline ------------------------------------------------------------

FAMILY_CONFIG = {
    "family": {"varying": {"R": [5.5, 6.5], "l": [4.5, 5.5]}, "fixed": {"r": 3.0, "t": 1.5}, "constraint": "R - r > l/3"},
    "law_family": HELIX_FAMILY.as_dict(),
    "grids": {a: g.as_dict() for a, g in HELIX_GRIDS.items()},
}


def run_pipeline(root):
    """Run every CLI command once under ``root``; returns {step: output dir}."""
    import yaml

    from softprbm.cli import main

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    dirs = {k: root / k for k in ("gen", "ing", "poly", "nn", "fam", "cmeta", "bmeta", "sim", "sm", "rep")}

    def conf(name, data):
        path = root / f"{name}.yaml"
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        return str(path)

    sim_cfg = {
        "chain": {
            "joint_type": "revolute",
            "base_rotation": [[0, 0, 1], [0, 1, 0], [-1, 0, 0]],
            "segments": [{"n": 6, "design": DESIGN.as_dict(), "law": {"source": "poly", "files": {"y": str(dirs["poly"] / "poly_samples_y.json")}}}],
        },
        "sweep": {"p": 5.0, "tip_mass_g": [0, 10, 20, 50]},
    }
    sm_cfg = {
        "meta": str(dirs["bmeta"] / "behavior_meta.json"),
        "target": {"type": "helix", "radius": 18, "height": 60},
        "candidates": [[7, 7, 6, 6], [6, 7, 7, 6]],
        "optimizer": {"max_iterations": 2},
        "refit": {"method": "poly", "law_family": FAMILY_CONFIG["law_family"], "grids": FAMILY_CONFIG["grids"]},
    }
    steps = [
        ["generate", "--preset", "bellow", "--out", dirs["gen"]],
        ["ingest", dirs["gen"] / "samples_y.csv", "--out", dirs["ing"]],
        ["fit-poly", dirs["ing"] / "samples_y.csv", "--out", dirs["poly"]],
        ["fit-nn", dirs["gen"] / "samples_y.csv", "--set", "train.max_iterations=200", "--set", "hidden=[16,16]", "--out", dirs["nn"]],
        ["generate", "--config", conf("fam", FAMILY_CONFIG), "--out", dirs["fam"]],
        ["fit-meta", dirs["fam"], "--set", "mode=coeff", "--set", "axis=y", "--set", "train.max_iterations=200", "--out", dirs["cmeta"]],
        ["fit-meta", dirs["fam"], "--set", "train.max_iterations=300", "--set", "train.batch_size=256", "--set", "hidden=[16,16]", "--out", dirs["bmeta"]],
        ["simulate", "--config", conf("sim", sim_cfg), "--out", dirs["sim"]],
        ["shapematch", "--config", conf("sm", sm_cfg), "--out", dirs["sm"]],
        ["report", dirs["poly"], dirs["nn"], dirs["sim"], dirs["sm"], "--out", dirs["rep"]],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"softprbm {argv[0]} exited with {code}")
    return dirs
