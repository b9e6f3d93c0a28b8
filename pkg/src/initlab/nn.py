"""Dense feed-forward networks with hand-written backpropagation.

Inputs are row batches: a layer maps ``x`` of shape (batch, n_in) to
``z = x @ W.T + b`` with ``W`` stored (n_out, n_in).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import ActivationKind, apply, derivative
from .init import FanSpec, InitScheme, init_matrix
from .numerics import ParameterError, RngState, ShapeError


class StaleCacheError(RuntimeError):
    """A forward cache no longer matches the network it is used with."""


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: ActivationKind | None = None

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent")
        if self.activation is not None:
            self.activation = ActivationKind.parse(self.activation)

    @property
    def fan(self) -> FanSpec:
        n_out, n_in = self.weight.shape
        return FanSpec(n_in, n_out)


class Mlp:
    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ShapeError(f"layer output {prev.weight.shape[0]} does not feed input {nxt.weight.shape[1]}")
        self.layers = list(layers)

    @classmethod
    def build(cls, sizes: list[int], activation="relu", output_activation=None) -> "Mlp":
        """Zero-initialized network with ``activation`` after every hidden layer."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else activation
            layers.append(DenseLayer(np.zeros((n_out, n_in)), np.zeros(n_out), act))
        return cls(layers)

    def initialize(self, rng: RngState, scheme: InitScheme) -> None:
        for i, layer in enumerate(self.layers):
            layer.weight = init_matrix(rng.child(f"layer{i}"), scheme, layer.fan)
            layer.bias = np.zeros_like(layer.bias)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weight, layer.bias = params[2 * i], params[2 * i + 1]

    def shapes(self) -> tuple:
        return tuple(p.shape for p in self.parameters())


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    shapes: tuple


def forward(mlp: Mlp, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.layers[0].weight.shape[1]:
        raise ShapeError(f"input of shape {x.shape} does not match n_in={mlp.layers[0].weight.shape[1]}")
    xs, zs = [], []
    for layer in mlp.layers:
        xs.append(x)
        z = x @ layer.weight.T + layer.bias
        zs.append(z)
        x = z if layer.activation is None else apply(layer.activation, z)
    return x, ForwardCache(xs, zs, mlp.shapes())


def backward(mlp: Mlp, cache: ForwardCache, loss_grad, return_input_grad: bool = False,
             trace: list | None = None):
    """Gradients ``[dW0, db0, dW1, db1, ...]`` for ``loss_grad = dL/d(outputs)``.

    With ``return_input_grad`` the gradient w.r.t. the network input is
    returned as a second value.  If ``trace`` is given, dL/dx at every layer
    boundary is appended to it, output side first.
    """
    if cache.shapes != mlp.shapes():
        raise StaleCacheError("forward cache was produced by a network of different shape")
    delta = np.asarray(loss_grad, dtype=np.float64)
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if trace is not None:
            trace.append(delta)
        if layer.activation is not None:
            delta = delta * derivative(layer.activation, cache.preacts[i])
        grads[2 * i] = delta.T @ cache.inputs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0 or return_input_grad or trace is not None:
            delta = delta @ layer.weight
    if trace is not None:
        trace.append(delta)
    if return_input_grad:
        return grads, delta
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - logsumexp[:, None])
    # softmax minus one-hot, with the label entry chosen so each row sums to 0 exactly
    grad = probs.copy()
    grad[np.arange(n), labels] = 0.0
    grad[np.arange(n), labels] = -grad.sum(axis=1)
    return loss, grad / n


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bce_with_logits(logits, targets) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy; returns the gradient in the shape of ``logits``."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("binary targets must be 0 or 1")
    # log(1 + exp(-|z|)) + max(z, 0) - z*y
    losses = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - z * y
    return float(losses.mean()), (sigmoid(z) - y) / z.size


# --------------------------------------------------------------------------
# optimizers


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = False

    def to_json(self) -> dict:
        return asdict(self)


class AdamState:
    """Bias-corrected Adam; ``decoupled=True`` gives AdamW."""

    def __init__(self, params: list[np.ndarray], config: AdamConfig, decay_mask: list[bool] | None = None):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.decay_mask = list(decay_mask) if decay_mask is not None else [True] * len(params)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> bool:
    """Update ``params`` in place.  Returns False (and touches nothing) on non-finite grads."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("parameter, gradient and optimizer buffer counts differ")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {m.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    c = state.config
    state.t += 1
    bc1 = 1.0 - c.beta1 ** state.t
    bc2 = 1.0 - c.beta2 ** state.t
    for p, g, m, v, decay in zip(params, grads, state.m, state.v, state.decay_mask):
        if c.weight_decay and decay:
            if c.decoupled:
                p *= 1.0 - c.lr * c.weight_decay
            else:
                g = g + c.weight_decay * p
        m *= c.beta1
        m += (1.0 - c.beta1) * g
        v *= c.beta2
        v += (1.0 - c.beta2) * np.square(g)
        p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
    return True


def global_norm(arrays: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(a, a)) for a in arrays))


# --------------------------------------------------------------------------
# training

SPIKE_FACTOR = 2.0
EXCURSION_FACTOR = 10.0


@dataclass
class TrainRecord:
    """Per-epoch history of one run; index e is the state after epoch e+1."""

    initial_loss: float = float("nan")
    initial_accuracy: float = float("nan")
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    grad_norm_max: list[float] = field(default_factory=list)
    max_abs_weight: list[float] = field(default_factory=list)
    spike: list[bool] = field(default_factory=list)
    excursion: list[bool] = field(default_factory=list)
    diverged: list[bool] = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "accuracy", "test_loss", "test_accuracy", "grad_norm",
               "grad_norm_max", "max_abs_weight", "spike", "excursion", "diverged")

    @property
    def epochs(self) -> int:
        return len(self.loss)

    @property
    def any_spike(self) -> bool:
        return any(self.spike)

    @property
    def any_diverged(self) -> bool:
        return any(self.diverged)

    def loss_trajectory(self) -> list[float]:
        """Initial loss followed by every epoch loss."""
        return [self.initial_loss] + list(self.loss)

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return _jsonable(out)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainRecord":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for e in range(self.epochs):
            row = [e + 1]
            for name in self.COLUMNS[1:]:
                col = getattr(self, name)
                val = col[e] if e < len(col) else ""
                row.append(int(val) if isinstance(val, bool) else repr(float(val)) if val != "" else "")
            w.writerow(row)
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _loss_fn(loss: str):
    if loss == "softmax_ce":
        return softmax_cross_entropy
    if loss == "bce":
        return bce_with_logits
    raise ParameterError(f"unknown loss {loss!r}")


def _accuracy(outputs: np.ndarray, targets: np.ndarray, loss: str) -> float:
    if loss == "bce":
        pred = (outputs.reshape(-1) > 0.0).astype(np.int64)  # sigmoid(z) > 0.5
    else:
        pred = outputs.argmax(axis=1)
    return float(np.mean(pred == targets.astype(np.int64)))


def evaluate(mlp: Mlp, inputs, targets, loss: str = "softmax_ce") -> tuple[float, float]:
    """Full-batch ``(loss, accuracy)``."""
    out, _ = forward(mlp, inputs)
    with np.errstate(all="ignore"):
        value, _ = _loss_fn(loss)(out, targets)
    return value, _accuracy(out, np.asarray(targets), loss)


def train(mlp: Mlp, dataset, scheme: InitScheme | None, optimizer: AdamConfig, epochs: int,
          rng: RngState, loss: str = "softmax_ce", batch_size: int = 32, test=None) -> TrainRecord:
    """Reinitialize ``mlp`` with ``scheme`` and run mini-batch Adam for ``epochs``.

    ``dataset``/``test`` need ``inputs`` and ``targets`` attributes.  The
    init stream is ``rng.child("init")`` and the shuffle stream
    ``rng.child("shuffle")``, so two schemes trained with the same ``rng``
    see the same batch order.  Divergence stops the run and is recorded.
    """
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.targets)
    if len(x) == 0:
        raise ParameterError("dataset is empty")
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} inputs but {len(y)} targets")
    if scheme is not None:
        mlp.initialize(rng.child("init"), scheme)
    shuffle_rng = rng.child("shuffle").generator
    loss_fn = _loss_fn(loss)
    params = mlp.parameters()
    state = AdamState(params, optimizer)
    record = TrainRecord()
    record.initial_loss, record.initial_accuracy = evaluate(mlp, x, y, loss)
    step_norms: list[float] = []
    prev_loss = record.initial_loss

    for _ in range(epochs):
        order = shuffle_rng.permutation(len(x))
        total, seen, norms, diverged, excursion = 0.0, 0, [], False, False
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(x), batch_size):
                idx = order[start:start + batch_size]
                out, cache = forward(mlp, x[idx])
                value, grad_out = loss_fn(out, y[idx])
                if not math.isfinite(value):
                    diverged = True
                    break
                grads = backward(mlp, cache, grad_out)
                norm = global_norm(grads)
                if step_norms and norm > EXCURSION_FACTOR * float(np.median(step_norms)):
                    excursion = True
                step_norms.append(norm)
                norms.append(norm)
                if not math.isfinite(norm) or not adam_step(state, params, grads):
                    diverged = True
                    break
                if not all(np.all(np.isfinite(p)) for p in params):
                    diverged = True
                    break
                total += value * len(idx)
                seen += len(idx)
            epoch_loss = total / seen if seen and not diverged else float("nan")
            train_loss, train_acc = evaluate(mlp, x, y, loss)
        if not math.isfinite(train_loss):
            diverged = True
        record.loss.append(epoch_loss if not diverged else float("nan"))
        record.accuracy.append(train_acc)
        if test is not None:
            tl, ta = evaluate(mlp, test.inputs, test.targets, loss)
            record.test_loss.append(tl)
            record.test_accuracy.append(ta)
        record.grad_norm.append(float(np.mean(norms)) if norms else float("nan"))
        record.grad_norm_max.append(float(np.max(norms)) if norms else float("nan"))
        record.max_abs_weight.append(max(float(np.max(np.abs(l.weight))) for l in mlp.layers))
        record.spike.append(bool(math.isfinite(epoch_loss) and epoch_loss > SPIKE_FACTOR * prev_loss))
        record.excursion.append(excursion)
        record.diverged.append(diverged)
        if diverged:
            break
        prev_loss = epoch_loss
    return record
