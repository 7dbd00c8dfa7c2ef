"""Feed-forward classifier in plain numpy: ReLU hidden layers, softmax output."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

HIDDEN_LAYER_COUNTS = (1, 2, 3, 4, 5)
HIDDEN_WIDTHS = (64, 128, 192, 256, 320, 384, 448, 512)
REFERENCE_HIDDEN = (384, 384, 256, 256)


class TrainingDiverged(RuntimeError):
    pass


class SearchFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class MLPArchitecture:
    input_dim: int = 14
    hidden: tuple[int, ...] = REFERENCE_HIDDEN
    output_dim: int = 128

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError(f"layer sizes must be positive: {self}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum(a * b + b for a, b in zip(d[:-1], d[1:]))

    def in_search_space(self) -> bool:
        return len(self.hidden) in HIDDEN_LAYER_COUNTS and all(h in HIDDEN_WIDTHS for h in self.hidden)

    def label(self) -> str:
        return "/".join(map(str, self.hidden)) or "linear"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    optimizer: str = "momentum"  # or "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.optimizer not in ("momentum", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class MLPModel:
    architecture: MLPArchitecture
    weights: list[np.ndarray]  # weights[k] has shape (dims[k], dims[k+1])
    biases: list[np.ndarray]
    feature_names: tuple[str, ...] = ()
    normalization: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = self.architecture.dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match architecture")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ValueError(f"layer {k} has shapes {w.shape}/{b.shape}, expected {(dims[k], dims[k + 1])}")

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def logits(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(np.atleast_2d(x)), axis=1)


def softmax(z):
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_model(arch: MLPArchitecture, seed: int = 0) -> MLPModel:
    """Uniform init in +-sqrt(6 / fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    dims = arch.dims
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / a)
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        biases.append(np.zeros(b))
    return MLPModel(arch, weights, biases)


def forward(model: MLPModel, x) -> np.ndarray:
    """Class probabilities for one input vector or a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.architecture.input_dim:
        raise ValueError(f"expected {model.architecture.input_dim} inputs, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    return model.predict_proba(x)


def loss_and_grads(model: MLPModel, x, y):
    """Mean cross-entropy and its gradients, ordered like ``model.params()``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    n = len(y)
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    p = softmax(h)
    loss = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))

    delta = p
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for k in range(last, -1, -1):
        grads_w[k] = acts[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    return float(loss), [g for wb in zip(grads_w, grads_b) for g in wb]


def accuracy(model: MLPModel, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == np.asarray(y)))


def fit(model: MLPModel, x, y, cfg: TrainConfig) -> list[float]:
    """Mini-batch gradient descent in place; returns the per-epoch mean loss."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    mu = cfg.momentum if cfg.optimizer == "momentum" else 0.0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= mu
                v -= cfg.learning_rate * g
                p += v
        history.append(total / len(y))
        if not np.isfinite(history[-1]):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
    return history


def train(train_ds, val_ds, arch: MLPArchitecture, cfg: TrainConfig | None = None):
    """Train on ``train_ds``; returns (model, validation accuracy).

    Datasets are anything with ``inputs()`` and ``labels`` (see ``dataset.Dataset``).
    """
    cfg = cfg or TrainConfig()
    if len(train_ds) == 0:
        raise ValueError("empty training split")
    x = train_ds.inputs()
    if x.shape[1] != arch.input_dim:
        raise ValueError(f"architecture expects {arch.input_dim} inputs, dataset has {x.shape[1]}")
    model = init_model(arch, cfg.seed)
    t0 = time.perf_counter()
    history = fit(model, x, train_ds.labels, cfg)
    elapsed = time.perf_counter() - t0
    if len(val_ds):
        acc = accuracy(model, val_ds.inputs(), val_ds.labels)
    else:
        acc = accuracy(model, x, train_ds.labels)
    model.feature_names = tuple(getattr(train_ds, "feature_names", ()))
    norm = getattr(train_ds, "normalization", None)
    model.normalization = None if norm is None else np.array(norm, dtype=float)
    model.metadata = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "momentum": cfg.momentum,
        "batch_size": cfg.batch_size,
        "optimizer": cfg.optimizer,
        "validation_accuracy": acc,
        "final_loss": history[-1],
        "loss_history": history,
    }
    log.debug("trained %s: acc=%.4f in %.1fs", arch.label(), acc, elapsed)
    return model, acc


# ---------------------------------------------------------------------------
# architecture search


def search_space(mode: str = "uniform", layer_counts=HIDDEN_LAYER_COUNTS, widths=HIDDEN_WIDTHS) -> list[tuple[int, ...]]:
    """Hidden-layer tuples to try.

    ``uniform``: every layer the same width (5 x 8 = 40 candidates by default).
    ``exhaustive``: every non-increasing width sequence (1286 by default).
    """
    widths = sorted(widths)
    if mode == "uniform":
        return [(w,) * n for n in layer_counts for w in widths]
    if mode == "exhaustive":
        out = []
        for n in layer_counts:
            out.extend(tuple(reversed(c)) for c in itertools.combinations_with_replacement(widths, n))
        return out
    raise ValueError(f"unknown search mode {mode!r}")


@dataclass
class SearchEntry:
    order: int
    architecture: MLPArchitecture
    accuracy: float
    seconds: float
    diverged: bool = False

    @property
    def n_params(self) -> int:
        return self.architecture.n_params


@dataclass
class SearchResult:
    best: MLPModel
    best_entry: SearchEntry
    entries: list[SearchEntry]

    def log_csv(self, with_time: bool = True) -> str:
        head = "order,architecture,layers,params,accuracy,diverged" + (",time_s" if with_time else "")
        rows = [head]
        for e in self.entries:
            row = f"{e.order},{e.architecture.label()},{len(e.architecture.hidden)},{e.n_params},{e.accuracy!r},{int(e.diverged)}"
            if with_time:
                row += f",{e.seconds:.3f}"
            rows.append(row)
        return "\n".join(rows) + "\n"


def select_best(entries) -> SearchEntry:
    """Highest accuracy; ties to fewer parameters, then fewer layers, then enumeration order."""
    live = [e for e in entries if not e.diverged and np.isfinite(e.accuracy)]
    if not live:
        raise SearchFailed("every candidate diverged")
    return min(live, key=lambda e: (-e.accuracy, e.n_params, len(e.architecture.hidden), e.order))


def architecture_search(train_ds, val_ds, space=None, cfg: TrainConfig | None = None, input_dim=None, output_dim=128):
    """Train every candidate and keep the best by validation accuracy."""
    cfg = cfg or TrainConfig()
    space = search_space() if space is None else list(space)
    if not space:
        raise SearchFailed("empty search space")
    input_dim = input_dim or train_ds.inputs().shape[1]
    entries = []
    models = {}
    for order, hidden in enumerate(space):
        arch = MLPArchitecture(input_dim, tuple(hidden), output_dim)
        t0 = time.perf_counter()
        try:
            model, acc = train(train_ds, val_ds, arch, cfg)
            diverged = False
        except TrainingDiverged:
            model, acc, diverged = None, float("nan"), True
        entries.append(SearchEntry(order, arch, acc, time.perf_counter() - t0, diverged))
        if model is not None:
            models[order] = model
            keep = select_best(entries).order
            models = {keep: models[keep]}
        log.info("candidate %d %s acc=%s", order, arch.label(), acc)
    best = select_best(entries)
    return SearchResult(models[best.order], best, entries)
