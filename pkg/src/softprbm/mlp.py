"""Small dense ReLU networks trained with Adam on MSE, in plain numpy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ActuationKind, NumericalError, ValidationError

FORMAT_VERSION = 1


class DimensionMismatch(ValidationError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class ZeroVariance(ValidationError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple
    output_dim: int = 1
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValidationError("input_dim and output_dim must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            raise ValidationError("hidden must be a non-empty list of positive widths")
        if self.activation != "relu":
            raise ValidationError("only ReLU activation is supported")

    @property
    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden, self.output_dim)

    def as_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "seed": self.seed,
            "activation": self.activation,
        }


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-column affine map ``z = (x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        shift = np.array(self.shift, dtype=float).ravel()
        scale = np.array(self.scale, dtype=float).ravel()
        if shift.shape != scale.shape:
            raise ValidationError("normalizer shift/scale length mismatch")
        if np.any(scale == 0.0) or not np.all(np.isfinite(scale)):
            raise ValidationError("normalizer scales must be finite and nonzero")
        shift.flags.writeable = False
        scale.flags.writeable = False
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def zscore(cls, x) -> "Normalizer":
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0.0, std, 1.0))

    @classmethod
    def from_bounds(cls, lo, hi) -> "Normalizer":
        """Map ``[lo, hi]`` onto ``[-1, 1]`` per column."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        return cls(0.5 * (hi + lo), np.where(half > 0.0, half, 1.0))

    @classmethod
    def concat(cls, *parts: "Normalizer") -> "Normalizer":
        return cls(np.concatenate([p.shift for p in parts]), np.concatenate([p.scale for p in parts]))

    def __len__(self):
        return self.shift.size

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def as_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data) -> "Normalizer":
        return cls(data["shift"], data["scale"])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int | None = None  # None: full batch
    max_iterations: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    holdout_fraction: float = 0.2
    seed: int = 0
    lr_schedule: str = "constant"  # or "cosine"
    min_learning_rate: float = 0.0
    early_stopping_patience: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must be in [0, 1)")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError("lr_schedule must be 'constant' or 'cosine'")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def lr_at(self, it: int) -> float:
        if self.lr_schedule == "constant" or self.max_iterations == 0:
            return self.learning_rate
        frac = it / self.max_iterations
        return self.min_learning_rate + 0.5 * (self.learning_rate - self.min_learning_rate) * (
            1.0 + math.cos(math.pi * frac)
        )


def init_params(spec: MlpSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    params = []
    widths = spec.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def _forward(params, z):
    acts = [z]
    h = z
    for i, (w, b) in enumerate(params):
        h = h @ w + b
        if i < len(params) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _backward(params, acts, grad_out):
    grads = [None] * len(params)
    g = grad_out
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        if i > 0:
            g = (g @ w.T) * (acts[i] > 0.0)
    return grads


def _mse_and_grad(params, z, y):
    acts = _forward(params, z)
    diff = acts[-1] - y
    loss = float(np.mean(diff**2))
    grads = _backward(params, acts, 2.0 * diff / diff.size)
    return loss, grads


@dataclass(eq=False)
class MlpSurrogate:
    """Trained network with its input/output normalizers."""

    spec: MlpSpec
    params: list
    in_norm: Normalizer
    out_norm: Normalizer
    kind: ActuationKind | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = self.spec.widths
        if len(self.params) != len(widths) - 1:
            raise ValidationError("layer count does not match spec")
        for (w, b), fi, fo in zip(self.params, widths[:-1], widths[1:]):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValidationError("weight shapes do not match spec")
        if len(self.in_norm) != self.spec.input_dim or len(self.out_norm) != self.spec.output_dim:
            raise ValidationError("normalizer width does not match spec")
        if self.kind is not None:
            self.kind = ActuationKind.parse(self.kind)

    def predict(self, x) -> np.ndarray:
        """Batch ``(N, input_dim)`` -> ``(N, output_dim)``; a single vector -> vector."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.spec.input_dim:
            raise DimensionMismatch(f"expected inputs of width {self.spec.input_dim}, got {x.shape}")
        h = self.in_norm.forward(x2)
        last = len(self.params) - 1
        for i, (w, b) in enumerate(self.params):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        y = self.out_norm.inverse(h)
        return y[0] if single else y

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "mlp_surrogate",
            "spec": self.spec.as_dict(),
            "kind": None if self.kind is None else self.kind.value,
            "in_norm": self.in_norm.as_dict(),
            "out_norm": self.out_norm.as_dict(),
            "layers": [
                {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in self.params
            ],
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSurrogate":
        if data.get("format_version") != FORMAT_VERSION or data.get("type") != "mlp_surrogate":
            raise ValidationError("not a version-1 network document")
        spec = MlpSpec(**data["spec"])
        params = [
            (np.array(layer["weights"], dtype=float).reshape(layer["shape"]), np.array(layer["bias"], dtype=float))
            for layer in data["layers"]
        ]
        return cls(
            spec,
            params,
            Normalizer.from_dict(data["in_norm"]),
            Normalizer.from_dict(data["out_norm"]),
            data.get("kind"),
            data.get("info", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "MlpSurrogate":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TrainHistory:
    loss: np.ndarray
    train_r2: float
    holdout_r2: float
    train_rmse: float
    holdout_rmse: float
    n_train: int
    n_holdout: int
    iterations: int
    per_output_r2: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "train_r2": self.train_r2,
            "holdout_r2": self.holdout_r2,
            "train_rmse": self.train_rmse,
            "holdout_rmse": self.holdout_rmse,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "iterations": self.iterations,
            "final_loss": float(self.loss[-1]) if self.loss.size else None,
            "per_output_r2": self.per_output_r2,
        }


def r_squared(predictions, targets) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``.

    Multi-column inputs are pooled: residual and total sums run over every
    column, each column centred on its own mean.
    """
    pred = np.asarray(predictions, dtype=float)
    targ = np.asarray(targets, dtype=float)
    if pred.shape != targ.shape:
        raise DimensionMismatch(f"shape mismatch {pred.shape} vs {targ.shape}")
    if targ.shape[0] < 2:
        raise ValidationError("r_squared needs at least two samples")
    ss_tot = float(np.sum((targ - targ.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("targets have zero variance")
    return 1.0 - float(np.sum((pred - targ) ** 2)) / ss_tot


def _safe_r2(pred, targ) -> float:
    try:
        return r_squared(pred, targ)
    except (ZeroVariance, ValidationError):
        return float("nan")


def _per_output_r2(pred, targ) -> list:
    return [_safe_r2(pred[:, j], targ[:, j]) for j in range(targ.shape[1])]


def split_indices(n: int, holdout_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_hold = int(math.floor(n * holdout_fraction))
    if n_hold == 0:
        return np.arange(n), np.arange(0)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train(
    spec: MlpSpec,
    inputs,
    outputs,
    cfg: TrainConfig | None = None,
    input_normalizer: Normalizer | None = None,
    kind=None,
) -> tuple[MlpSurrogate, TrainHistory]:
    """Fit ``spec`` to ``inputs -> outputs`` with full-batch (default) Adam.

    Inputs and outputs are z-scored on the training split unless an input
    normalizer is supplied.  Deterministic for a given ``spec.seed`` and
    ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"inputs must be (N, {spec.input_dim}), got {x.shape}")
    if y.shape[1] != spec.output_dim or y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"outputs must be ({x.shape[0]}, {spec.output_dim}), got {y.shape}")
    if x.shape[0] == 0:
        raise ValidationError("training data is empty")

    tr, ho = split_indices(x.shape[0], cfg.holdout_fraction, cfg.seed)
    in_norm = input_normalizer or Normalizer.zscore(x[tr])
    out_norm = Normalizer.zscore(y[tr])
    z_tr, t_tr = in_norm.forward(x[tr]), out_norm.forward(y[tr])

    params = init_params(spec)
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    rng = np.random.default_rng(cfg.seed + 1)
    n_tr = z_tr.shape[0]
    batch = n_tr if not cfg.batch_size else min(cfg.batch_size, n_tr)
    losses = []
    best_hold, since_best = math.inf, 0
    step = 0
    for it in range(cfg.max_iterations):
        if batch < n_tr:
            idx = rng.choice(n_tr, size=batch, replace=False)
            loss, grads = _mse_and_grad(params, z_tr[idx], t_tr[idx])
        else:
            loss, grads = _mse_and_grad(params, z_tr, t_tr)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became non-finite at iteration {it}; lower the learning rate")
        losses.append(loss)
        step += 1
        lr = cfg.lr_at(it)
        bc1 = 1.0 - cfg.beta1**step
        bc2 = 1.0 - cfg.beta2**step
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = m[i]
            vw, vb = v[i]
            mw *= cfg.beta1
            mw += (1.0 - cfg.beta1) * gw
            mb *= cfg.beta1
            mb += (1.0 - cfg.beta1) * gb
            vw *= cfg.beta2
            vw += (1.0 - cfg.beta2) * gw * gw
            vb *= cfg.beta2
            vb += (1.0 - cfg.beta2) * gb * gb
            w -= lr * (mw / bc1) / (np.sqrt(vw / bc2) + cfg.epsilon)
            b -= lr * (mb / bc1) / (np.sqrt(vb / bc2) + cfg.epsilon)
        if cfg.early_stopping_patience and ho.size:
            hold = float(np.mean((_forward(params, in_norm.forward(x[ho]))[-1] - out_norm.forward(y[ho])) ** 2))
            if hold < best_hold - 1e-12:
                best_hold, since_best = hold, 0
            else:
                since_best += 1
                if since_best >= cfg.early_stopping_patience:
                    break

    model = MlpSurrogate(spec, params, in_norm, out_norm, kind)
    pred_tr = model.predict(x[tr])
    pred_ho = model.predict(x[ho]) if ho.size else np.zeros((0, spec.output_dim))
    hist = TrainHistory(
        loss=np.array(losses),
        train_r2=_safe_r2(pred_tr, y[tr]),
        holdout_r2=_safe_r2(pred_ho, y[ho]) if ho.size >= 2 else float("nan"),
        train_rmse=float(np.sqrt(np.mean((pred_tr - y[tr]) ** 2))),
        holdout_rmse=float(np.sqrt(np.mean((pred_ho - y[ho]) ** 2))) if ho.size else float("nan"),
        n_train=int(tr.size),
        n_holdout=int(ho.size),
        iterations=len(losses),
        per_output_r2=_per_output_r2(pred_tr, y[tr]),
    )
    model.info = {"train_config": cfg.as_dict(), "history": hist.summary()}
    return model, hist


def parameter_gradients(model: MlpSurrogate, x, y):
    """Analytic gradients of the normalized-scale MSE at ``(x, y)``."""
    z = model.in_norm.forward(np.atleast_2d(x))
    t = model.out_norm.forward(np.atleast_2d(y))
    return _mse_and_grad(model.params, z, t)


def gradient_check(model: MlpSurrogate, x, y, step: float = 1e-5) -> float:
    """Max relative deviation between backprop and central-difference gradients.

    Deviation per parameter is ``|g_a - g_fd| / max(|g_a| + |g_fd|, 1e-8)``.
    """
    z = model.in_norm.forward(np.atleast_2d(np.asarray(x, dtype=float)))
    t = model.out_norm.forward(np.atleast_2d(np.asarray(y, dtype=float)))
    params = [(w.copy(), b.copy()) for w, b in model.params]
    _, grads = _mse_and_grad(params, z, t)
    worst = 0.0
    for li, (w, b) in enumerate(params):
        for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + step
                lp = float(np.mean((_forward(params, z)[-1] - t) ** 2))
                flat[k] = orig - step
                lm = float(np.mean((_forward(params, z)[-1] - t) ** 2))
                flat[k] = orig
                fd = (lp - lm) / (2.0 * step)
                dev = abs(gflat[k] - fd) / max(abs(gflat[k]) + abs(fd), 1e-8)
                worst = max(worst, dev)
    return worst
