"""Command-line front end: ``softprbm <command> [options]``.

Every command reads one YAML config (JSON works too), applies flag
overrides, writes its outputs into ``--out`` and leaves a ``manifest.json``
there. ``softprbm replay`` re-runs a manifest and compares output checksums.

Exit codes: 0 ok, 1 replay mismatch, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import re
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from .core import ActuationKind, ModuleDesign, NumericalError, SampleGrid, ValidationError
from .manifest import RunManifest, compare_outputs, derive_seed, sha256_file
from .metamodel import (
    BehaviorMetaModel,
    CoeffMetaModel,
    DesignFamily,
    build_family,
    fit_behavior_metamodel,
    fit_coeff_metamodel,
)
from .mlp import MlpSpec, MlpSurrogate, TrainConfig, train
from .oracle import (
    GroundTruthLaw,
    IngestConfig,
    LawFamily,
    generate_samples,
    ingest_csv,
    write_samples_csv,
)
from .polyfit import FitConfig, PolySurrogate, fit_poly_surrogate
from .prbm import (
    ChainSpec,
    ClampSaturation,
    JointLaw,
    LoadCase,
    SegmentSpec,
    SolverConfig,
    load_chain,
    read_centerline_csv,
    sweep_loadcases,
    write_state_csv,
)
from .report import centerline_svg, torque_family_svg, trace_svg, write_svg
from .shapematch import (
    BalanceConfig,
    ShapeMatchConfig,
    StructuralCandidate,
    enumerate_structures,
    optimize_design,
    refit_and_verify,
    target_from_dict,
    write_bundle,
)

log = logging.getLogger("softprbm")

EXIT_OK, EXIT_MISMATCH, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

# ---------------------------------------------------------------------------------
# presets for ``generate``

_BELLOW_LAW = {"form": "separable_linear", "params": {"a1": 0.002, "a0": 0.1, "e1": 0.05, "e0": 0.0, "c": 0.004}}

PRESETS = {
    "bellow": {
        "kind": "pressure",
        "design": {"r": 3.0, "R": 6.0, "l": 5.0, "t": 1.5},
        "axes": {
            "y": {
                "law": _BELLOW_LAW,
                "grid": {"p_min": 0.0, "p_max": 15.0, "p_step": 0.5, "ext_min": 0.0, "ext_max": 0.02, "ext_step": 0.0006},
            }
        },
    },
    "helix": {
        "kind": "pressure",
        "design": {"r": 3.0, "R": 6.0, "l": 5.0, "t": 1.5},
        "axes": {
            "y": {
                "law": _BELLOW_LAW,
                "grid": {"p_min": 0.0, "p_max": 15.0, "p_step": 1.0, "ext_min": 0.0, "ext_max": 0.8, "ext_step": 0.05},
            },
            "x": {
                "law": {"form": "separable_linear", "params": {"a1": 0.001, "a0": 0.15, "e1": 0.05, "e0": 0.0, "c": 0.0}},
                "grid": {"p_min": 0.0, "p_max": 15.0, "p_step": 1.0, "ext_min": 0.0, "ext_max": 0.006, "ext_step": 0.0002},
            },
            "z": {
                "law": {"form": "separable_linear", "params": {"a1": 0.001, "a0": 0.07, "e1": 0.02, "e0": 0.0, "c": 0.0014}},
                "grid": {"p_min": 0.0, "p_max": 15.0, "p_step": 1.0, "ext_min": 0.0, "ext_max": 0.006, "ext_step": 0.0002},
            },
        },
    },
    "tendon": {
        "kind": "tendon",
        "design": {"r": 3.0, "R": 6.0, "l": 5.0, "t": 1.5},
        "axes": {
            "y": {
                "law": {"form": "separable_linear", "params": {"a1": 0.01, "a0": 0.1, "e1": 0.05, "e0": 0.0, "c": 0.05}},
                "grid": {"p_min": 0.0, "p_max": 8.0, "p_step": 0.05, "ext_min": 0.0, "ext_max": 0.05, "ext_step": 0.0025},
            }
        },
    },
}

# ---------------------------------------------------------------------------------
# config handling


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-8`` style numbers as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)


def load_config(path) -> dict:
    """Parse a YAML/JSON config; errors carry line and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = _yaml_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ValidationError(f"{where}: {exc.problem or exc}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_set(cfg: dict, assignment: str) -> None:
    """``a.b.c=value`` with a YAML-parsed value."""
    if "=" not in assignment:
        raise ValidationError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = _yaml_load(raw)
    except yaml.YAMLError:
        raise ValidationError(f"--set {key}: cannot parse value {raw!r}") from None
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValidationError(f"--set {key}: {part} is not a mapping")
    node[parts[-1]] = value


def _absolute(path, base: Path) -> str:
    p = Path(path)
    return str((p if p.is_absolute() else base / p).resolve())


def _resolve_paths(cfg: dict, base: Path) -> dict:
    """Make every file reference in ``cfg`` absolute so the snapshot is self-contained."""
    cfg = copy.deepcopy(cfg)
    if "inputs" in cfg:
        cfg["inputs"] = [_absolute(p, base) for p in cfg["inputs"]]
    for key in ("meta", "chain_file"):
        if cfg.get(key):
            cfg[key] = _absolute(cfg[key], base)
    if isinstance(cfg.get("target"), dict) and cfg["target"].get("file"):
        cfg["target"]["file"] = _absolute(cfg["target"]["file"], base)
    for seg in (cfg.get("chain") or {}).get("segments", []) or []:
        law = seg.get("law") or {}
        if "file" in law:
            law["file"] = _absolute(law["file"], base)
        if isinstance(law.get("files"), dict):
            law["files"] = {a: _absolute(p, base) for a, p in law["files"].items()}
    return cfg


def _allowed(cfg: dict, keys, command: str) -> None:
    extra = sorted(set(cfg) - set(keys) - {"seed", "jobs", "format", "preset"})
    if extra:
        raise ValidationError(f"{command}: unknown config key(s) {extra}")


def _inputs(cfg: dict, command: str, n_min: int = 1) -> list[str]:
    paths = list(cfg.get("inputs") or [])
    if len(paths) < n_min:
        raise ValidationError(f"{command}: needs at least {n_min} input file(s)")
    return paths


def _design(d: dict) -> ModuleDesign:
    try:
        return ModuleDesign(**{k: float(d[k]) for k in ("r", "R", "l", "t")})
    except KeyError as exc:
        raise ValidationError(f"design is missing {exc.args[0]!r}") from None


def _grid(g: dict, axis: str) -> SampleGrid:
    try:
        return SampleGrid(axis_label=axis, **{k: float(v) for k, v in g.items() if k != "axis_label"})
    except TypeError as exc:
        raise ValidationError(f"grid for axis {axis!r}: {exc}") from None


def _train_config(d: dict | None, seed: int) -> TrainConfig:
    d = dict(d or {})
    d.setdefault("seed", seed)
    try:
        return TrainConfig(**d)
    except TypeError as exc:
        raise ValidationError(f"train: {exc}") from None


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------------
# commands; each returns the list of files it wrote


def run_generate(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("kind", "design", "axes", "family", "law_family", "grids"), "generate")
    root = int(cfg.get("seed", 0))
    kind = ActuationKind.parse(cfg.get("kind", "pressure"))
    files = []
    if "family" in cfg:
        fam_cfg = cfg["family"]
        family = build_family(fam_cfg["varying"], fam_cfg.get("fixed", {}), fam_cfg.get("constraint", "R - r >= l/4"))
        lf = cfg.get("law_family")
        if not lf:
            raise ValidationError("generate: family mode needs law_family")
        law_family = LawFamily.from_dict(lf)
        grids = {a: _grid(g, a) for a, g in (cfg.get("grids") or {}).items()}
        missing = [a for a in law_family.axes if a not in grids]
        if missing:
            raise ValidationError(f"generate: no grid for axis {missing}")
        (out / "samples").mkdir(exist_ok=True)
        files.append(family.save(out / "family.json"))
        with man.stage("generate"):
            for did, d in zip(family.ids, family.designs):
                for axis in law_family.axes:
                    stage = f"generate/{did}/{axis}"
                    seed = derive_seed(root, stage)
                    man.seeds[stage] = seed
                    base = law_family.law(axis, d)
                    law = GroundTruthLaw(base.form, base.params, base.noise_std, seed, base.bracket)
                    s = generate_samples(law, grids[axis], d, kind)
                    files.append(write_samples_csv(s, out / "samples" / f"{did}_{axis}.csv"))
        return files

    design = _design(cfg.get("design") or {})
    axes = cfg.get("axes") or {}
    if not axes:
        raise ValidationError("generate: config needs 'axes' (or 'family')")
    with man.stage("generate"):
        for axis, spec in axes.items():
            stage = f"generate/{axis}"
            seed = derive_seed(root, stage)
            man.seeds[stage] = seed
            law = GroundTruthLaw.from_dict({**spec["law"], "seed": seed})
            s = generate_samples(law, _grid(spec["grid"], axis), design, kind)
            files.append(write_samples_csv(s, out / f"samples_{axis}.csv"))
    return files


def run_ingest(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("inputs", "columns", "scale", "kind", "design", "axis"), "ingest")
    icfg = IngestConfig(
        columns=dict(cfg.get("columns") or {}),
        scale=dict(cfg.get("scale") or {}),
        kind=cfg.get("kind"),
        design=cfg.get("design"),
        axis=cfg.get("axis"),
    )
    files = []
    with man.stage("ingest"):
        for path in _inputs(cfg, "ingest"):
            s = ingest_csv(path, icfg)
            files.append(write_samples_csv(s, out / f"{Path(path).stem}.csv"))
    return files


def run_fit_poly(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("inputs", "fit"), "fit-poly")
    try:
        fcfg = FitConfig(**(cfg.get("fit") or {}))
    except TypeError as exc:
        raise ValidationError(f"fit: {exc}") from None
    files, rows = [], []
    with man.stage("fit"):
        for path in _inputs(cfg, "fit-poly"):
            s = ingest_csv(path)
            sur = fit_poly_surrogate(s, fcfg)
            stem = Path(path).stem
            files.append(sur.save(out / f"poly_{stem}.json"))
            q = sur.fit_report["training"]
            rows.append([stem, sur.axis_label, *sur.coefficients(), q["rmse"], q["max_normalized"]])
    files.append(
        _write_rows(out / "fit_report.csv", ["input", "axis", "m_a", "b_a", "m_e", "b_e", "k_n", "rmse", "max_normalized"], rows)
    )
    return files


def run_fit_nn(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("inputs", "hidden", "train"), "fit-nn")
    root = int(cfg.get("seed", 0))
    hidden = tuple(cfg.get("hidden", (64, 64)))
    files, rows = [], []
    with man.stage("train"):
        for path in _inputs(cfg, "fit-nn"):
            s = ingest_csv(path)
            stem = Path(path).stem
            stage = f"fit-nn/{stem}"
            seed = derive_seed(root, stage)
            man.seeds[stage] = seed
            x, y = s.training_pairs()
            model, hist = train(MlpSpec(2, hidden, 1, seed=seed), x, y, _train_config(cfg.get("train"), seed), kind=s.kind)
            model.info["axis"] = s.axis_label
            model.info["operating_range"] = {
                "p": [float(x[:, 0].min()), float(x[:, 0].max())],
                "u": [float(x[:, 1].min()), float(x[:, 1].max())],
            }
            files.append(model.save(out / f"mlp_{stem}.json"))
            rows.append([stem, s.axis_label, hist.train_r2, hist.holdout_r2, hist.holdout_rmse, hist.iterations])
    files.append(_write_rows(out / "fit_report.csv", ["input", "axis", "train_r2", "holdout_r2", "holdout_rmse", "iterations"], rows))
    return files


def _family_samples(directory: Path):
    """DesignFamily plus per-design {axis: SampleSet} from a ``generate`` family run."""
    fam_path = directory / "family.json"
    if not fam_path.is_file():
        raise ValidationError(f"{directory} has no family.json (run 'generate' with a family config)")
    family = DesignFamily.load(fam_path)
    sets, used = [], [fam_path]
    for did in family.ids:
        per = {}
        for f in sorted((directory / "samples").glob(f"{did}_*.csv")):
            s = ingest_csv(f)
            per[s.axis_label] = s
            used.append(f)
        if not per:
            raise ValidationError(f"no samples for design {did} in {directory / 'samples'}")
        sets.append(per)
    return family, sets, used


def run_fit_meta(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("inputs", "mode", "hidden", "train", "fit", "axis"), "fit-meta")
    mode = cfg.get("mode", "behavior")
    root = int(cfg.get("seed", 0))
    inputs = _inputs(cfg, "fit-meta")
    if len(inputs) != 1 or not Path(inputs[0]).is_dir():
        raise ValidationError("fit-meta: input must be one family directory written by 'generate'")
    family, sets, used = _family_samples(Path(inputs[0]))
    for f in used:
        man.add_input(f)
    stage = f"fit-meta/{mode}"
    seed = derive_seed(root, stage)
    man.seeds[stage] = seed
    files = []
    if mode == "coeff":
        axis = cfg.get("axis") or next(iter(sets[0]))
        try:
            fcfg = FitConfig(**(cfg.get("fit") or {}))
        except TypeError as exc:
            raise ValidationError(f"fit: {exc}") from None
        with man.stage("fit"):
            surs = [fit_poly_surrogate(per[axis], fcfg) for per in sets]
        tcfg = _train_config({"holdout_fraction": 0.0, **(cfg.get("train") or {})}, seed)
        with man.stage("train"):
            meta = fit_coeff_metamodel(family, surs, tcfg, tuple(cfg.get("hidden", (64, 64, 32))), seed)
        files.append(meta.save(out / "coeff_meta.json"))
        per = meta.report["r2_per_coefficient"]
        rows = [[name, per[name]] for name in per] + [["pooled", meta.report["r2_pooled"]]]
        files.append(_write_rows(out / "meta_report.csv", ["coefficient", "r2"], rows))
    elif mode == "behavior":
        tcfg = _train_config(cfg.get("train"), seed)
        with man.stage("train"):
            meta = fit_behavior_metamodel(family, sets, tcfg, tuple(cfg.get("hidden", (64, 64))), seed)
        files.append(meta.save(out / "behavior_meta.json"))
        rows = [[a, r["train_r2"], r["holdout_r2"], r["holdout_rmse"]] for a, r in meta.report.items()]
        files.append(_write_rows(out / "meta_report.csv", ["axis", "train_r2", "holdout_r2", "holdout_rmse"], rows))
    else:
        raise ValidationError(f"fit-meta: mode must be 'coeff' or 'behavior', got {mode!r}")
    return files


def _law_from_config(spec: dict, design: ModuleDesign, man: RunManifest, cache: dict) -> JointLaw:
    source = spec.get("source")
    key = json.dumps(spec, sort_keys=True) + json.dumps(design.as_dict(), sort_keys=True)
    if key in cache:
        return cache[key]
    rng = spec.get("operating_range")
    if source in ("poly", "mlp"):
        files = spec.get("files") or {}
        if not files:
            raise ValidationError(f"{source} law needs 'files' mapping axis -> model file")
        models = {}
        for axis, path in files.items():
            man.add_input(path)
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            models[axis] = PolySurrogate.from_dict(data) if source == "poly" else MlpSurrogate.from_dict(data)
        law = JointLaw.poly(models, rng) if source == "poly" else JointLaw.mlp(models, rng)
    elif source == "meta":
        path = spec.get("file")
        if not path:
            raise ValidationError("meta law needs 'file'")
        man.add_input(path)
        meta = cache.get(path) or BehaviorMetaModel.load(path)
        cache[path] = meta
        law = JointLaw.meta(meta, design, guard=bool(spec.get("guard", True)))
    else:
        raise ValidationError(f"law source must be poly, mlp or meta, got {source!r}")
    cache[key] = law
    return law


def _chain_from_config(cfg: dict, man: RunManifest) -> ChainSpec:
    if cfg.get("chain_file"):
        path = Path(cfg["chain_file"])
        man.add_input(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        for seg in data.get("segments", []):
            if "law_file" in seg:
                man.add_input(path.parent / seg["law_file"])
        return load_chain(path)
    c = cfg.get("chain")
    if not c:
        raise ValidationError("simulate: config needs 'chain' or 'chain_file'")
    cache: dict = {}
    segs = []
    for entry in c.get("segments", []):
        d = _design(entry["design"])
        segs.append(SegmentSpec(int(entry["n"]), d, _law_from_config(entry["law"], d, man, cache), float(entry.get("phi", 0.0))))
    kw = {}
    for name in ("gravity", "base_position"):
        if name in c:
            kw[name] = tuple(c[name])
    if "base_rotation" in c:
        kw["base_rotation"] = np.asarray(c["base_rotation"], dtype=float)
    if "joint_offset" in c:
        kw["joint_offset"] = float(c["joint_offset"])
    if "link_masses" in c:
        kw["link_masses"] = tuple(c["link_masses"])
    return ChainSpec(tuple(segs), c.get("joint_type", "revolute"), **kw)


def _loads(cfg: dict) -> list:
    loads = [LoadCase.from_dict(d) for d in cfg.get("loads") or []]
    sweep = cfg.get("sweep")
    if sweep:
        grams = sweep.get("tip_mass_g", [0, 10, 20, 50])
        base = {k: v for k, v in sweep.items() if k != "tip_mass_g"}
        loads += [LoadCase.from_dict({**base, "tip_mass": float(g) * 1e-3}) for g in grams]
    if not loads:
        raise ValidationError("simulate: config needs 'loads' or 'sweep'")
    return loads


def run_simulate(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("chain", "chain_file", "loads", "sweep", "solver", "warm_start"), "simulate")
    chain = _chain_from_config(cfg, man)
    loads = _loads(cfg)
    try:
        scfg = SolverConfig(**(cfg.get("solver") or {}))
    except TypeError as exc:
        raise ValidationError(f"solver: {exc}") from None
    with man.stage("solve"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampSaturation)
        states = sweep_loadcases(chain, loads, scfg, bool(cfg.get("warm_start", True)))
    for w in caught:
        log.warning("%s", w.message)
    files, rows = [], []
    for i, (load, st) in enumerate(zip(loads, states)):
        files.append(write_state_csv(chain, st, out / f"state_{i:03d}.csv"))
        rows.append([i, load.tip_mass, *st.tip, st.residual_norm, st.iterations, int(st.converged), len(st.clamp_events)])
    files.append(
        _write_rows(
            out / "summary.csv",
            ["case", "tip_mass", "tip_x", "tip_y", "tip_z", "residual_norm", "iterations", "converged", "clamp_events"],
            rows,
        )
    )
    failed = [i for i, st in enumerate(states) if not st.converged]
    if failed:
        man.record_outputs(out, files)
        raise NumericalError(f"load case(s) {failed} did not converge; best iterates written")
    return files


def run_shapematch(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("meta", "target", "N", "l_range", "balance", "max_total", "candidates", "optimizer", "refit"), "shapematch")
    if not cfg.get("meta"):
        raise ValidationError("shapematch: config needs 'meta' (behavior meta-model file)")
    man.add_input(cfg["meta"])
    meta = BehaviorMetaModel.load(cfg["meta"])
    tdesc = dict(cfg.get("target") or {"type": "helix", "radius": 18.0, "height": 60.0})
    if tdesc.get("file"):
        man.add_input(tdesc["file"])
        tdesc = {"type": "points", "points": read_centerline_csv(tdesc["file"]).points.tolist()}
    target = target_from_dict(tdesc)
    if cfg.get("candidates"):
        cands = [StructuralCandidate(tuple(int(v) for v in n)) for n in cfg["candidates"]]
    else:
        bal = BalanceConfig(**(cfg.get("balance") or {}))
        cands = enumerate_structures(target, int(cfg.get("N", 4)), tuple(cfg.get("l_range", (4.0, 6.0))), bal, cfg.get("max_total"))
    root = int(cfg.get("seed", 0))
    seed = derive_seed(root, "shapematch")
    man.seeds["shapematch"] = seed
    opt = dict(cfg.get("optimizer") or {})
    if "solver" in opt:
        opt["solver"] = SolverConfig(**opt["solver"])
    for k in ("R_bounds", "l_bounds", "p_bounds", "gravity", "base_position"):
        if k in opt and opt[k] is not None:
            opt[k] = tuple(opt[k])
    if opt.get("base_rotation") is not None:
        opt["base_rotation"] = tuple(tuple(r) for r in opt["base_rotation"])
    try:
        smc = ShapeMatchConfig(seed=seed, jobs=int(cfg.get("jobs", 1)), **opt)
    except TypeError as exc:
        raise ValidationError(f"optimizer: {exc}") from None
    with man.stage("optimize"):
        res = optimize_design(target, cands, meta, smc)
    res.config = {**res.config, "jobs": None}  # worker count does not change results
    files = list(write_bundle(res, out).values())
    refit = cfg.get("refit")
    if refit:
        law_family = LawFamily.from_dict(refit["law_family"])
        grids = {a: _grid(g, a) for a, g in refit["grids"].items()}
        method = refit.get("method", "poly")
        tcfg = _train_config(refit.get("train"), derive_seed(root, "refit")) if method == "mlp" else None
        with man.stage("refit"):
            rr = refit_and_verify(res.best, target, law_family, grids, smc, method=method, train_cfg=tcfg)
        files.append(_write_json(out / "refit.json", rr.as_dict()))
    return files


class _MlpCurve:
    """``eval(p, u)`` adapter so networks plot like polynomial surrogates."""

    def __init__(self, model: MlpSurrogate):
        self.model = model
        self.operating_range = model.info.get("operating_range", {})
        self.axis_label = model.info.get("axis", "")

    def eval(self, p, u):
        u = np.asarray(u, dtype=float)
        return self.model.predict(np.column_stack([np.full(u.size, p), u]))[:, 0]


def _csv_header(path: Path) -> list:
    with path.open(newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def run_report(cfg: dict, out: Path, man: RunManifest) -> list:
    _allowed(cfg, ("inputs", "p_levels", "u_range"), "report")
    paths = []
    for p in _inputs(cfg, "report"):
        p = Path(p)
        if p.is_dir():
            paths += sorted(f for f in p.iterdir() if f.suffix in (".json", ".csv") and f.name != "manifest.json")
        else:
            paths.append(p)
    files, states = [], []
    with man.stage("render"):
        for p in paths:
            if p.suffix == ".json":
                data = json.loads(p.read_text(encoding="utf-8"))
                kind = data.get("type")
                if kind == "poly_surrogate":
                    curve = PolySurrogate.from_dict(data)
                elif kind == "mlp_surrogate":
                    curve = _MlpCurve(MlpSurrogate.from_dict(data))
                else:
                    continue
                man.add_input(p)
                svg = torque_family_svg(curve, cfg.get("p_levels"), cfg.get("u_range"))
                files.append(write_svg(svg, out / f"torque_{p.stem}.svg"))
                continue
            header = _csv_header(p)
            if header[:1] == ["record"]:
                man.add_input(p)
                c = read_centerline_csv(p)
                states.append((p.stem, c))
                files.append(write_svg(centerline_svg([c], [p.stem], title=p.stem), out / f"centerline_{p.stem}.svg"))
            elif "sim_x" in header:
                man.add_input(p)
                arr = np.loadtxt(p, delimiter=",", skiprows=1)
                curves = [arr[:, 2:5], arr[:, 5:8]]
                svg = centerline_svg(curves, ["simulated", "target"], title="shape match")
                files.append(write_svg(svg, out / f"centerline_{p.stem}.svg"))
            elif "best_so_far" in header:
                man.add_input(p)
                with p.open(newline="", encoding="utf-8") as fh:
                    rows = list(csv.DictReader(fh))
                files.append(write_svg(trace_svg(rows), out / f"trace_{p.stem}.svg"))
        if len(states) > 1:
            svg = centerline_svg([c for _, c in states], [n for n, _ in states], title="load sweep")
            files.append(write_svg(svg, out / "centerlines_all.svg"))
    if not files:
        raise ValidationError("report: no plottable inputs (surrogate JSON, state/centerline/trace CSV)")
    return files


COMMANDS = {
    "generate": run_generate,
    "ingest": run_ingest,
    "fit-poly": run_fit_poly,
    "fit-nn": run_fit_nn,
    "fit-meta": run_fit_meta,
    "simulate": run_simulate,
    "shapematch": run_shapematch,
    "report": run_report,
}


def execute(command: str, cfg: dict, out) -> RunManifest:
    """Run ``command`` with a fully resolved config and write its manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = copy.deepcopy(cfg)
    man = RunManifest(command, snapshot, seeds={"root": int(cfg.get("seed", 0))})
    for p in cfg.get("inputs") or []:
        if Path(p).is_file():
            man.add_input(p)
        elif not Path(p).exists():
            raise ValidationError(f"input not found: {p}")
    try:
        files = COMMANDS[command](cfg, out, man)
        man.record_outputs(out, files)
    finally:
        man.write(out)
    return man


def replay(manifest_path, out) -> tuple[RunManifest, list[str]]:
    """Re-run a manifest; returns the new manifest and any output differences."""
    old = RunManifest.load(manifest_path)
    if old.command not in COMMANDS:
        raise ValidationError(f"manifest names unknown command {old.command!r}")
    for path, digest in old.inputs.items():
        if not Path(path).is_file():
            raise ValidationError(f"replay input missing: {path}")
        if sha256_file(path) != digest:
            raise ValidationError(f"replay input changed since the recorded run: {path}")
    new = execute(old.command, old.config, out)
    return new, compare_outputs(old.outputs, new.outputs)


# ---------------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, inputs: bool) -> None:
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--jobs", type=int, help="parallel workers where supported")
    p.add_argument("--format", choices=["csv"], default="csv", help="tabular output format")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field (dotted key)")
    if inputs:
        p.add_argument("inputs", nargs="*", help="input files or directories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softprbm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="synthesize characterization samples from ground-truth laws")
    _common(g, inputs=False)
    g.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in sampling preset")
    helps = {
        "ingest": "convert external CSV exports to the canonical sample format",
        "fit-poly": "fit polynomial joint surrogates",
        "fit-nn": "train network joint surrogates",
        "fit-meta": "train a coefficient or behavior meta-model on a design family",
        "simulate": "solve chain equilibria over a list of load cases",
        "shapematch": "optimize actuator designs to match a target centerline",
        "report": "render SVG plots from surrogates, states and traces",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text), inputs=name in ("ingest", "fit-poly", "fit-nn", "fit-meta", "report"))
    r = sub.add_parser("replay", help="re-run a manifest and compare output checksums")
    r.add_argument("manifest", help="manifest.json or the directory holding it")
    r.add_argument("--out", required=True, help="output directory for the re-run")
    return parser


def resolve_config(args) -> dict:
    cfg: dict = {}
    preset = getattr(args, "preset", None)
    if preset:
        cfg = copy.deepcopy(PRESETS[preset])
        cfg["preset"] = preset
    if args.config:
        path = Path(args.config)
        cfg = deep_merge(cfg, _resolve_paths(load_config(path), path.resolve().parent))
    for assignment in args.set:
        apply_set(cfg, assignment)
    if getattr(args, "inputs", None):
        cfg["inputs"] = [_absolute(p, Path.cwd()) for p in args.inputs]
    cfg = _resolve_paths(cfg, Path.cwd())
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    cfg["format"] = args.format
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            man, problems = replay(args.manifest, args.out)
            for p in problems:
                print(f"MISMATCH {p}")
            print(f"replayed {man.command}: {len(man.outputs)} output(s), {len(problems)} difference(s)")
            return EXIT_MISMATCH if problems else EXIT_OK
        man = execute(args.command, resolve_config(args), args.out)
        print(f"{args.command}: wrote {len(man.outputs)} file(s) to {args.out}")
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
