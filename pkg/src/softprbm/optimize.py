"""Bounded CMA-ES.

Search runs in box-normalized coordinates ``[0, 1]^d``. Samples leaving the
box are clamped before evaluation and charged a quadratic repair penalty.
Updates are rank based, so minimizing ``c*f + b`` (``c > 0``) follows the same
trajectory as ``f``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ValidationError

SIGMA_FLOOR = 1e-12


def default_population(dimension: int) -> int:
    return 4 + int(math.floor(3 * math.log(dimension)))


@dataclass(frozen=True)
class CmaConfig:
    """Strategy settings.

    Parameters
    ----------
    bounds
        Sequence of ``(lo, hi)`` pairs, one per coordinate.
    sigma0
        Initial step size as a fraction of the normalized box.
    population
        Offspring count; defaults to ``4 + floor(3 ln d)``.
    x0
        Optional initial mean in original coordinates (default: box centre).
    max_evaluations
        Optional hard cap on objective calls.
    """

    bounds: tuple
    sigma0: float = 0.3
    population: int | None = None
    max_iterations: int = 1000
    target_value: float | None = None
    seed: int = 0
    x0: tuple | None = None
    max_evaluations: int | None = None

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1:
            raise ValidationError("bounds must be a sequence of (lo, hi) pairs")
        if not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise ValidationError("bounds must be finite with lo < hi")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in b))
        if not self.sigma0 > 0:
            raise ValidationError("sigma0 must be positive")
        if self.population is not None and self.population < 2:
            raise ValidationError("population must be at least 2")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be non-negative")
        if self.x0 is not None:
            x0 = tuple(float(v) for v in self.x0)
            if len(x0) != len(self.bounds):
                raise ValidationError("x0 length does not match bounds")
            object.__setattr__(self, "x0", x0)

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def lam(self) -> int:
        return self.population if self.population is not None else default_population(self.dimension)

    def as_dict(self) -> dict:
        return {
            "bounds": [list(b) for b in self.bounds],
            "sigma0": self.sigma0,
            "population": self.lam,
            "max_iterations": self.max_iterations,
            "target_value": self.target_value,
            "seed": self.seed,
            "x0": list(self.x0) if self.x0 is not None else None,
            "max_evaluations": self.max_evaluations,
        }


@dataclass
class CmaResult:
    best_x: np.ndarray
    best_f: float
    evaluations: int
    generations: int
    history: list = field(default_factory=list)
    stop_reason: str = "max_iterations"

    def as_dict(self) -> dict:
        return {
            "best_x": [float(v) for v in self.best_x],
            "best_f": float(self.best_f),
            "evaluations": self.evaluations,
            "generations": self.generations,
            "stop_reason": self.stop_reason,
        }


HISTORY_FIELDS = ("generation", "evaluations", "sigma", "best_f", "mean_f", "best_so_far")


def write_trace_csv(result: CmaResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in result.history:
            w.writerow([row[k] if isinstance(row[k], int) else repr(float(row[k])) for k in HISTORY_FIELDS])
    return path


def _finite_or_inf(values) -> np.ndarray:
    f = np.asarray(values, dtype=float).reshape(-1)
    return np.where(np.isfinite(f), f, np.inf)


def _iqr_scale(f: np.ndarray) -> float:
    finite = f[np.isfinite(f)]
    if finite.size < 2:
        return 0.0
    q75, q25 = np.percentile(finite, [75, 25])
    return float(q75 - q25)


def minimize_batch(
    f_batch: Callable[[np.ndarray], Sequence[float]],
    cfg: CmaConfig,
    callback: Callable[[dict], bool] | None = None,
) -> CmaResult:
    """Minimize with a population evaluator.

    ``f_batch`` receives an ``(n, d)`` array in original coordinates and returns
    ``n`` objective values in the same order. Non-finite values rank worst.
    ``callback`` gets each history row; returning True stops the run with
    ``stop_reason='target_reached'``.
    """
    d = cfg.dimension
    lam = cfg.lam
    mu = lam // 2
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in cfg.bounds])
    hi = np.array([b[1] for b in cfg.bounds])
    span = hi - lo

    raw_w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    weights = raw_w / raw_w.sum()
    mueff = 1.0 / np.sum(weights**2)

    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    cs = (mueff + 2) / (d + mueff + 5)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    if cfg.x0 is not None:
        mean = np.clip((np.asarray(cfg.x0) - lo) / span, 0.0, 1.0)
    else:
        mean = np.full(d, 0.5)
    sigma = float(cfg.sigma0)
    pc = np.zeros(d)
    ps = np.zeros(d)
    C = np.eye(d)
    B = np.eye(d)
    D = np.ones(d)
    inv_sqrt_C = np.eye(d)
    eigen_eval = 0

    def evaluate(z01: np.ndarray) -> np.ndarray:
        x = lo + z01 * span
        vals = _finite_or_inf(f_batch(x))
        if vals.size != z01.shape[0]:
            raise ValidationError(f"batch evaluator returned {vals.size} values for {z01.shape[0]} candidates")
        return vals

    f0 = float(evaluate(mean[None, :])[0])
    evaluations = 1
    best_x = lo + mean * span
    best_f = f0
    history: list[dict] = []
    stop = "max_iterations"

    def budget_left() -> bool:
        return cfg.max_evaluations is None or evaluations < cfg.max_evaluations

    if cfg.target_value is not None and best_f <= cfg.target_value:
        return CmaResult(best_x, best_f, evaluations, 0, history, "target_reached")

    generation = 0
    while generation < cfg.max_iterations:
        if not budget_left():
            stop = "max_evaluations"
            break
        generation += 1
        arz = rng.standard_normal((lam, d))
        ary = arz @ (B * D).T  # B diag(D) z
        arx = mean + sigma * ary
        clamped = np.clip(arx, 0.0, 1.0)
        raw = evaluate(clamped)
        evaluations += lam

        # repair penalty scaled by the spread of this generation, keeps rank invariance under c*f + b
        dist2 = np.sum((arx - clamped) ** 2, axis=1)
        scale = _iqr_scale(raw)
        w_pen = scale / (sigma * sigma) if scale > 0 else 1.0
        fit = raw + w_pen * dist2

        order = np.lexsort((np.sum(arz**2, axis=1), fit))
        for i in range(lam):
            if raw[i] < best_f:
                best_f = float(raw[i])
                best_x = lo + clamped[i] * span
        sel = order[:mu]
        y_w = weights @ ary[sel]
        mean = mean + sigma * y_w

        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_C @ y_w)
        ps_norm = float(np.linalg.norm(ps))
        hsig = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * generation)) / chi_n < 1.4 + 2 / (d + 1)
        pc = (1 - cc) * pc + (hsig * math.sqrt(cc * (2 - cc) * mueff)) * y_w
        artmp = ary[sel]
        C = (
            (1 - c1 - cmu) * C
            + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
            + cmu * (artmp.T * weights) @ artmp
        )
        sigma *= math.exp((cs / damps) * (ps_norm / chi_n - 1))

        if evaluations - eigen_eval > lam / (c1 + cmu) / d / 10:
            eigen_eval = evaluations
            C = np.triu(C) + np.triu(C, 1).T
            evals, B = np.linalg.eigh(C)
            evals = np.maximum(evals, 1e-300)
            D = np.sqrt(evals)
            inv_sqrt_C = (B / D) @ B.T

        finite = raw[np.isfinite(raw)]
        row = {
            "generation": generation,
            "evaluations": evaluations,
            "sigma": float(sigma),
            "best_f": float(np.min(raw)),
            "mean_f": float(np.mean(finite)) if finite.size else float("inf"),
            "best_so_far": float(best_f),
        }
        history.append(row)

        if cfg.target_value is not None and best_f <= cfg.target_value:
            stop = "target_reached"
            break
        if callback is not None and callback(row):
            stop = "target_reached"
            break
        if sigma * float(np.max(D)) < SIGMA_FLOOR or sigma < SIGMA_FLOOR:
            stop = "sigma_collapse"
            break
        if not np.all(np.isfinite(C)):
            stop = "sigma_collapse"
            break

    return CmaResult(np.asarray(best_x, dtype=float), float(best_f), evaluations, generation, history, stop)


def minimize(f: Callable[[np.ndarray], float], cfg: CmaConfig, callback=None) -> CmaResult:
    """Minimize a scalar objective over the box; see ``minimize_batch``."""

    def batch(xs):
        return [f(x) for x in xs]

    return minimize_batch(batch, cfg, callback)

