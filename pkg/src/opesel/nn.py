"""Feedforward ReLU networks trained with Adam and early stopping.

Used for every supervised sub-task: Q-networks in FQI/FQE, the dynamics and
reward models of the approximate model, and the behavior-policy classifier.
Everything runs in float64 numpy so that finite-difference gradient checks
are meaningful.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .seeding import make_rng

_EPOCH_KEY = 0xE90C
_SPLIT_KEY = 0x5E11
_INIT_KEY = 0x1417


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 1
    hidden_units: int = 1000
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_layers", "hidden_units", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def with_seed(self, seed: int) -> "NetConfig":
        return NetConfig(**{**asdict(self), "seed": int(seed)})


@dataclass
class PatternSet:
    """Inputs with regression targets or class labels.

    ``mask`` (regression only) weights each output entry in the loss; the
    Q-networks use it to train only the output of the logged action.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.inputs.shape[0] == 0:
            raise ValueError("empty pattern set")
        if len(self.targets) != self.inputs.shape[0]:
            raise ValueError("inputs and targets differ in length")
        if self.mask is not None and self.mask.shape[0] != self.inputs.shape[0]:
            raise ValueError("mask length mismatch")

    def __len__(self) -> int:
        return self.inputs.shape[0]


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class MLP:
    task: str  # "regression" | "classification"
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    squeeze: bool = False
    config: NetConfig = field(default_factory=NetConfig)
    history: dict = field(default_factory=dict)

    @classmethod
    def init(cls, task: str, n_in: int, n_out: int, config: NetConfig, seed: int | None = None) -> "MLP":
        rng = make_rng(config.seed if seed is None else seed, _INIT_KEY)
        sizes = [n_in] + [config.hidden_units] * config.hidden_layers + [n_out]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(task, weights, biases, config=config)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, params: list[np.ndarray]) -> None:
        n = len(self.weights)
        self.weights = [p.copy() for p in params[:n]]
        self.biases = [p.copy() for p in params[n:]]

    # -- forward/backward ------------------------------------------------------

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def _loss_and_grads(
        self, X: np.ndarray, Y: np.ndarray, mask: np.ndarray | None
    ) -> tuple[float, list[np.ndarray]]:
        out, acts = self._forward(X)
        if self.task == "regression":
            diff = out - Y
            w = np.ones_like(diff) if mask is None else mask
            denom = max(float(w.sum()), 1e-12)
            loss = float(np.sum(w * diff * diff) / denom)
            d_out = 2.0 * w * diff / denom
        else:
            logits = out - out.max(axis=1, keepdims=True)
            logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
            n = X.shape[0]
            loss = float(-logp[np.arange(n), Y].mean())
            d_out = np.exp(logp)
            d_out[np.arange(n), Y] -= 1.0
            d_out /= n
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, [*gW, *gb]

    def loss(self, patterns: PatternSet) -> float:
        X, Y, M = _prepare(self, patterns)
        return self._loss_and_grads(X, Y, M)[0]

    def raw_output(self, X: np.ndarray) -> np.ndarray:
        return self._forward(X)[0]


def _prepare(model: MLP, patterns: PatternSet) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    X = patterns.inputs
    if model.task == "regression":
        Y = np.asarray(patterns.targets, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        M = None if patterns.mask is None else np.asarray(patterns.mask, dtype=np.float64).reshape(Y.shape)
    else:
        Y = np.asarray(patterns.targets, dtype=np.int64)
        M = None
    return X, Y, M


def _train(model: MLP, patterns: PatternSet, config: NetConfig) -> MLP:
    X, Y, M = _prepare(model, patterns)
    n = X.shape[0]
    order = make_rng(config.seed, _SPLIT_KEY).permutation(n)
    n_val = int(round(config.val_fraction * n)) if n >= 2 else 0
    n_val = min(max(n_val, 1 if n >= 2 else 0), n - 1)
    tr_idx, va_idx = order[: n - n_val], order[n - n_val :]
    if n_val == 0:
        va_idx = tr_idx

    def sub(idx):
        return X[idx], Y[idx], None if M is None else M[idx]

    Xv, Yv, Mv = sub(va_idx)
    opt = Adam(config.learning_rate)
    best_loss = model._loss_and_grads(Xv, Yv, Mv)[0]
    best_params, best_epoch, stale = model.copy_params(), 0, 0
    train_hist, val_hist = [], []
    for epoch in range(1, config.max_epochs + 1):
        perm = tr_idx[make_rng(config.seed, _EPOCH_KEY, epoch).permutation(tr_idx.size)]
        running = 0.0
        for lo in range(0, perm.size, config.batch_size):
            Xb, Yb, Mb = sub(perm[lo : lo + config.batch_size])
            loss, grads = model._loss_and_grads(Xb, Yb, Mb)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {lo}")
            opt.step(model.params, grads)
            running += loss * Xb.shape[0]
        val_loss = model._loss_and_grads(Xv, Yv, Mv)[0]
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        train_hist.append(running / perm.size)
        val_hist.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_params, best_epoch, stale = val_loss, model.copy_params(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.set_params(best_params)
    model.history = {
        "train_loss": train_hist,
        "val_loss": val_hist,
        "best_epoch": best_epoch,
        "best_val_loss": best_loss,
        "epochs_run": len(val_hist),
    }
    return model


def fit_regressor(patterns: PatternSet, config: NetConfig) -> MLP:
    """Minimise masked mean squared error; best-validation weights are restored."""
    Y = np.asarray(patterns.targets)
    n_out = 1 if Y.ndim == 1 else Y.shape[1]
    model = MLP.init("regression", patterns.inputs.shape[1], n_out, config)
    model.squeeze = Y.ndim == 1
    return _train(model, patterns, config)


def fit_classifier(patterns: PatternSet, config: NetConfig, n_classes: int | None = None) -> MLP:
    """Softmax cross-entropy classifier over ``n_classes`` labels."""
    labels = np.asarray(patterns.targets, dtype=np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("class labels out of range")
    model = MLP.init("classification", patterns.inputs.shape[1], k, config)
    return _train(model, patterns, config)


def predict(model: MLP, inputs: np.ndarray) -> np.ndarray:
    """Regression outputs, or class probabilities (rows sum to 1) for classifiers."""
    X = np.asarray(inputs, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.n_inputs:
        raise ValueError(f"expected {model.n_inputs} input features, got {X.shape[1]}")
    out = model.raw_output(X)
    if model.task == "classification":
        out = np.exp(out - out.max(axis=1, keepdims=True))
        out /= out.sum(axis=1, keepdims=True)
    elif model.squeeze:
        out = out[:, 0]
    return out[0] if single else out


@dataclass(frozen=True)
class GradientReport:
    max_rel_error: float
    worst_param: tuple[int, tuple[int, ...]]
    n_checked: int
    passed: bool


def gradient_check(model: MLP, patterns: PatternSet, tolerance: float = 1e-4, step: float = 1e-5) -> GradientReport:
    """Compare backprop gradients against central finite differences of the loss."""
    X, Y, M = _prepare(model, patterns)
    _, analytic = model._loss_and_grads(X, Y, M)
    worst, worst_at, count = 0.0, (0, ()), 0
    for k, p in enumerate(model.params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = model._loss_and_grads(X, Y, M)[0]
            p[idx] = orig - step
            down = model._loss_and_grads(X, Y, M)[0]
            p[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[k][idx]
            scale = max(abs(a), abs(numeric))
            err = 0.0 if scale < 1e-10 else abs(a - numeric) / scale
            count += 1
            if err > worst:
                worst, worst_at = err, (k, idx)
    return GradientReport(float(worst), worst_at, count, bool(worst <= tolerance))


# -- persistence ----------------------------------------------------------------


def save_model(model: MLP, path: str | os.PathLike) -> None:
    """``.npz`` holding a JSON header plus raw float64 weight arrays."""
    header = {"task": model.task, "squeeze": model.squeeze, "config": asdict(model.config), "n_layers": len(model.weights)}
    arrays = {f"W{i}": w for i, w in enumerate(model.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(model.biases)})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> MLP:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        n = header["n_layers"]
        weights = [z[f"W{i}"].copy() for i in range(n)]
        biases = [z[f"b{i}"].copy() for i in range(n)]
    return MLP(header["task"], weights, biases, header["squeeze"], NetConfig(**header["config"]))
