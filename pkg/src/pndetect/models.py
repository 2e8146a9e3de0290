"""Class-weighted logistic regression and multilayer perceptron.

Both models take CSR count matrices (or lists of ``SparseVector``) and are
trained by mini-batch gradient descent on the weighted cross-entropy

    L = sum_i w_i * bce(y_i, z_i) / sum_i w_i + l2/2 * sum ||W||^2

where ``w_i`` is the class weight of sample ``i`` and biases are not
penalized. Normalizing by the total weight makes duplicating a sample
equivalent to doubling its weight.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .features import ClassWeights, SparseVector, Vocabulary, as_csr

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    class_weights: ClassWeights | None = None
    l2: float = 1e-5
    hidden_sizes: tuple[int, ...] = (64,)
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        cw = d.get("class_weights")
        if isinstance(cw, dict):
            d["class_weights"] = ClassWeights(**cw)
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", (64,)))
        return cls(**d)


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    history: list[float] = field(default_factory=list)

    kind = "logreg"

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, np.array(self.bias)]

    def logits(self, X: sp.csr_matrix) -> np.ndarray:
        return np.asarray(X @ self.weights).ravel() + self.bias

    def logits_dense(self, Z: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Logits for dense rows whose nonzero columns are limited to ``cols``."""
        return Z @ self.weights[cols] + self.bias


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    history: list[float] = field(default_factory=list)

    kind = "mlp"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("an MLP needs at least one hidden layer")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ValueError("weight and bias shapes disagree")
        for A, B in zip(self.weights, self.weights[1:]):
            if A.shape[1] != B.shape[0]:
                raise ValueError("adjacent layer dimensions disagree")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have a single unit")

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.dim,) + tuple(W.shape[1] for W in self.weights)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def _tail(self, h: np.ndarray) -> np.ndarray:
        for W, b in zip(self.weights[1:], self.biases[1:]):
            h = np.maximum(h, 0.0) @ W + b
        return h[:, 0]

    def logits(self, X: sp.csr_matrix) -> np.ndarray:
        return self._tail(np.asarray(X @ self.weights[0]) + self.biases[0])

    def logits_dense(self, Z: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return self._tail(Z @ self.weights[0][cols] + self.biases[0])


Model = LogRegModel | MlpModel


def _check_dim(model: Model, X: sp.csr_matrix) -> None:
    if X.shape[1] != model.dim:
        raise ValueError(f"input dimension {X.shape[1]} does not match model dimension {model.dim}")


def predict_proba(model: Model, X) -> np.ndarray:
    X = as_csr(X, model.dim)
    _check_dim(model, X)
    return expit(model.logits(X))


def predict(model: Model, x: SparseVector | sp.spmatrix) -> float | np.ndarray:
    """Probability of the PnD class; a float for a single vector."""
    if isinstance(x, SparseVector):
        return float(predict_proba(model, x)[0])
    return predict_proba(model, x)


def predict_labels(model: Model, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, X) >= threshold).astype(int)


# -- losses -----------------------------------------------------------------

def _bce(z: np.ndarray, y: np.ndarray, sw: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted mean binary cross-entropy on logits, and dL/dz."""
    total = sw.sum()
    loss = np.sum(sw * (np.logaddexp(0.0, z) - y * z)) / total
    return float(loss), sw * (expit(z) - y) / total


def logreg_loss_grad(params, X, y, sw, l2):
    w, b = params
    z = np.asarray(X @ w).ravel() + b
    loss, dz = _bce(z, y, sw)
    loss += 0.5 * l2 * float(w @ w)
    gw = np.asarray(X.T @ dz).ravel() + l2 * w
    return loss, [gw, np.array(dz.sum())]


def mlp_loss_grad(params, X, y, sw, l2):
    Ws, bs = params[0::2], params[1::2]
    pre = [np.asarray(X @ Ws[0]) + bs[0]]
    acts = []
    for W, b in zip(Ws[1:], bs[1:]):
        a = np.maximum(pre[-1], 0.0)
        acts.append(a)
        pre.append(a @ W + b)
    z = pre[-1][:, 0]
    loss, dz = _bce(z, y, sw)
    loss += 0.5 * l2 * sum(float(np.sum(W * W)) for W in Ws)

    grads = [None] * len(params)
    delta = dz[:, None]
    for layer in range(len(Ws) - 1, -1, -1):
        inp = X if layer == 0 else acts[layer - 1]
        gW = np.asarray(inp.T @ delta) + l2 * Ws[layer]
        grads[2 * layer] = gW
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ Ws[layer].T) * (pre[layer - 1] > 0)
    return loss, grads


# -- training -----------------------------------------------------------------

def _sample_weights(y: np.ndarray, cfg: TrainConfig, sample_weight) -> np.ndarray:
    sw = np.ones(y.size) if cfg.class_weights is None else cfg.class_weights.for_labels(y)
    if sample_weight is not None:
        sw = sw * np.asarray(sample_weight, dtype=float)
    return sw


def _prepare(X, y, dim=None):
    X = as_csr(X, dim)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} samples but {y.size} labels")
    if y.size < 2 or len(np.unique(y)) < 2:
        raise ValueError("training needs at least two samples covering both classes")
    return X, y


def _fit(params: list[np.ndarray], loss_grad: Callable, X, y, sw, cfg: TrainConfig) -> list[float]:
    # divergence is caught by the finiteness checks below, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _fit_loop(params, loss_grad, X, y, sw, cfg)


def _fit_loop(params: list[np.ndarray], loss_grad: Callable, X, y, sw, cfg: TrainConfig) -> list[float]:
    rng = np.random.default_rng(cfg.seed + 1)
    n = y.size
    history = []
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.batch_size < n else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_grad(params, X[idx], y[idx], sw[idx], cfg.l2)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {start} "
                    f"(learning_rate={cfg.learning_rate}, l2={cfg.l2}, optimizer={cfg.optimizer})"
                )
            step += 1
            for i, g in enumerate(grads):
                if cfg.optimizer == "sgd":
                    params[i] -= cfg.learning_rate * g
                else:
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    mhat = m[i] / (1 - beta1**step)
                    vhat = v[i] / (1 - beta2**step)
                    params[i] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        full, _ = loss_grad(params, X, y, sw, cfg.l2)
        if not np.isfinite(full):
            raise TrainingError(f"non-finite loss {full} after epoch {epoch} (learning_rate={cfg.learning_rate})")
        history.append(full)
    return history


def train_logreg(X, y, cfg: TrainConfig = TrainConfig(), sample_weight=None) -> LogRegModel:
    X, y = _prepare(X, y)
    sw = _sample_weights(y, cfg, sample_weight)
    params = [np.zeros(X.shape[1]), np.array(0.0)]
    history = _fit(params, logreg_loss_grad, X, y, sw, cfg)
    return LogRegModel(params[0], float(params[1]), history)


def init_mlp(dim: int, hidden_sizes: Sequence[int], seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    sizes = [dim, *hidden_sizes, 1]
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def train_mlp(X, y, cfg: TrainConfig = TrainConfig(), sample_weight=None) -> MlpModel:
    if not cfg.hidden_sizes:
        raise ValueError("an MLP needs at least one hidden layer; use train_logreg instead")
    X, y = _prepare(X, y)
    sw = _sample_weights(y, cfg, sample_weight)
    params = init_mlp(X.shape[1], cfg.hidden_sizes, cfg.seed)
    history = _fit(params, mlp_loss_grad, X, y, sw, cfg)
    return MlpModel(params[0::2], params[1::2], history)


TRAINERS = {"logreg": train_logreg, "mlp": train_mlp}


def train(kind: str, X, y, cfg: TrainConfig) -> Model:
    try:
        trainer = TRAINERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(TRAINERS)}") from None
    return trainer(X, y, cfg)


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, model: Model, cfg: TrainConfig, vocab: Vocabulary) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": cfg.to_dict(),
        "vocab_hash": vocab.digest(),
        "dim": model.dim,
        "history": [float(h) for h in model.history],
    }
    arrays = {f"p{i}": np.asarray(p) for i, p in enumerate(model.params)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path, vocab: Vocabulary | None = None) -> tuple[Model, dict]:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            params = [data[f"p{i}"] for i in range(len(data.files) - 1)]
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    if vocab is not None and vocab.digest() != meta["vocab_hash"]:
        raise CheckpointError("checkpoint was trained on a different vocabulary")
    if meta["kind"] == "logreg":
        model: Model = LogRegModel(params[0], float(params[1]), meta["history"])
    elif meta["kind"] == "mlp":
        model = MlpModel(params[0::2], params[1::2], meta["history"])
    else:
        raise CheckpointError(f"unknown model kind {meta['kind']!r}")
    return model, meta
