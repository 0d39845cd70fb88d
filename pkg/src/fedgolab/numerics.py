"""Dense MLP forward/backward, losses and optimizers on float64 numpy arrays."""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field

import numpy as np

KL_FLOOR = 1e-12
PROB_ROW_TOL = 1e-6


class ConfigurationError(ValueError):
    """Raised for shape or configuration mistakes before any compute runs."""


class InvalidTargetError(ValueError):
    pass


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    KL_TO_TARGET = "kl_to_target"
    GAN_BCE = "gan_bce"
    L1_BINARY = "l1_binary"


@dataclass
class Diagnostics:
    """Counters for numerically guarded events; never silently dropped."""

    kl_clamps: int = 0

    def reset(self) -> None:
        self.kl_clamps = 0


DIAGNOSTICS = Diagnostics()


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent RNG stream for the entity identified by ``keys`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return -np.logaddexp(0.0, -z)


@dataclass
class MlpModel:
    layer_dims: list[int]
    activations: list[Activation]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.activations = [Activation(a) for a in self.activations]
        n_layers = len(self.layer_dims) - 1
        if n_layers < 1:
            raise ConfigurationError("an MLP needs at least input and output dims")
        if len(self.activations) != n_layers:
            raise ConfigurationError(
                f"expected {n_layers} activations for dims {self.layer_dims}, got {len(self.activations)}"
            )
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ConfigurationError("parameter list length does not match layer count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise ConfigurationError(f"layer {i}: expected weight {want}, got {w.shape} / bias {b.shape}")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            list(self.activations),
            [np.array(p, dtype=np.float64) for p in params[0::2]],
            [np.array(p, dtype=np.float64) for p in params[1::2]],
        )

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def init_mlp(layer_dims, activations, rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), list(activations), weights, biases)


def zeros_like_params(params):
    return [np.zeros_like(p) for p in params]


def _as_batch(model: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ConfigurationError(f"batch has {x.shape[-1]} columns, model expects {model.layer_dims[0]}")
    return x


def _activate(kind: Activation, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return sigmoid(z)
    return z


def forward_with_cache(model: MlpModel, batch):
    x = _as_batch(model, batch)
    cache = [x]
    h = x
    for w, b, act in zip(model.weights, model.biases, model.activations):
        h = _activate(act, h @ w + b)
        cache.append(h)
    return h, cache


def mlp_forward(model: MlpModel, batch) -> np.ndarray:
    out, _ = forward_with_cache(model, batch)
    return out


def backward(model: MlpModel, cache, grad_out):
    """Backpropagate ``grad_out`` (dL/d output) through a cached forward pass.

    Returns ``(param_grads, input_grad)`` with param grads ordered like ``model.params``.
    """
    grads = [None] * (2 * len(model.weights))
    g = np.asarray(grad_out, dtype=np.float64)
    for i in range(len(model.weights) - 1, -1, -1):
        out = cache[i + 1]
        act = model.activations[i]
        if act is Activation.RELU:
            g = g * (out > 0)
        elif act is Activation.SIGMOID:
            g = g * out * (1.0 - out)
        grads[2 * i] = cache[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ model.weights[i].T
    return grads, g


def softmax_stable(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def check_probability_rows(target) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64)
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=-1) - 1.0) > PROB_ROW_TOL):
        raise InvalidTargetError("KL target rows must be non-negative and sum to 1")
    return t


def _xlogx_over(t, q, diagnostics: Diagnostics):
    """Elementwise t*ln(t/q) with 0 ln 0 = 0 and q floored at KL_FLOOR."""
    mask = t > 0
    clamped = mask & (q < KL_FLOOR)
    diagnostics.kl_clamps += int(clamped.sum())
    q_safe = np.maximum(q, KL_FLOOR)
    out = np.zeros_like(t)
    out[mask] = t[mask] * (np.log(t[mask]) - np.log(q_safe[mask]))
    return out


def loss_eval(kind: LossKind, prediction, target, diagnostics: Diagnostics | None = None) -> float:
    """Mean loss over rows, with predictions already in probability space.

    CrossEntropy and KL take probability rows; GanBce and L1Binary take a
    probability in [0, 1] per sample against a {0, 1} target.
    """
    diagnostics = diagnostics or DIAGNOSTICS
    kind = LossKind(kind)
    p = np.atleast_1d(np.asarray(prediction, dtype=np.float64))
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if kind is LossKind.KL_TO_TARGET:
        t = check_probability_rows(t)
        per_row = _xlogx_over(t, p, diagnostics).sum(axis=-1)
    elif kind is LossKind.CROSS_ENTROPY:
        per_row = -(t * np.log(np.maximum(p, KL_FLOOR))).sum(axis=-1)
    elif kind is LossKind.GAN_BCE:
        p = np.clip(p, KL_FLOOR, 1.0 - KL_FLOOR)
        per_row = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    else:
        per_row = np.abs(p - t)
    return float(np.mean(per_row))


def _loss_and_dlogits(kind: LossKind, logits, targets, diagnostics: Diagnostics):
    """Loss (mean over batch) and its gradient w.r.t. raw model outputs."""
    n = logits.shape[0]
    if kind is LossKind.CROSS_ENTROPY:
        logp = log_softmax(logits)
        loss = float(-(targets * logp).sum() / n)
        return loss, (np.exp(logp) - targets) / n
    if kind is LossKind.KL_TO_TARGET:
        targets = check_probability_rows(targets)
        logp = log_softmax(logits)
        p = np.exp(logp)
        mask = targets > 0
        diagnostics.kl_clamps += int((mask & (p < KL_FLOOR)).sum())
        kl = np.zeros_like(targets)
        kl[mask] = targets[mask] * (np.log(targets[mask]) - np.maximum(logp[mask], math.log(KL_FLOOR)))
        # row sums of targets are 1 within tolerance; renormalise so grad is exact
        row = targets.sum(axis=1, keepdims=True)
        return float(kl.sum() / n), (p * row - targets) / n
    z = logits
    if kind is LossKind.GAN_BCE:
        loss = -(targets * log_sigmoid(z) + (1.0 - targets) * log_sigmoid(-z))
        return float(loss.sum() / n), (sigmoid(z) - targets) / n
    if kind is LossKind.L1_BINARY:
        s = sigmoid(z)
        loss = np.abs(s - targets)
        return float(loss.sum() / n), np.sign(s - targets) * s * (1.0 - s) / n
    raise ConfigurationError(f"unknown loss kind {kind}")


def mlp_grad(model: MlpModel, batch, targets, loss: LossKind, diagnostics: Diagnostics | None = None):
    """Mean loss over the batch and gradients shaped like ``model.params``.

    GanBce and L1Binary read the single model output as a logit.
    """
    diagnostics = diagnostics or DIAGNOSTICS
    loss = LossKind(loss)
    out, cache = forward_with_cache(model, batch)
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != out.shape:
        raise ConfigurationError(f"targets shape {t.shape} does not match output shape {out.shape}")
    value, dlogits = _loss_and_dlogits(loss, out, t, diagnostics)
    grads, _ = backward(model, cache, dlogits)
    return value, grads


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------- optimizers


@dataclass(frozen=True)
class SGD:
    lr: float
    momentum: float = 0.0


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RMSprop:
    # smoothing constant and eps follow the common torch defaults
    lr: float = 1e-2
    alpha: float = 0.99
    eps: float = 1e-8


OptimizerKind = SGD | Adam | RMSprop


@dataclass
class OptimizerState:
    kind: OptimizerKind
    step_count: int = 0
    slots: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if isinstance(self.kind, Adam) and not (0 <= self.kind.beta1 < 1 and 0 <= self.kind.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")


def make_optimizer(kind: OptimizerKind, params) -> OptimizerState:
    n_slots = {SGD: 1, Adam: 2, RMSprop: 1}[type(kind)]
    return OptimizerState(kind, 0, [zeros_like_params(params) for _ in range(n_slots)])


def optimizer_step(state: OptimizerState, params, grads, lr: float | None = None):
    """One update; returns new params and mutates ``state``. ``lr`` overrides the configured rate."""
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ConfigurationError(f"param shape {p.shape} vs grad shape {g.shape}")
    kind = state.kind
    lr = kind.lr if lr is None else lr
    state.step_count += 1
    out = []
    if isinstance(kind, SGD):
        (vel,) = state.slots
        for i, (p, g) in enumerate(zip(params, grads)):
            if kind.momentum:
                vel[i] = kind.momentum * vel[i] + g
                out.append(p - lr * vel[i])
            else:
                out.append(p - lr * g)
    elif isinstance(kind, Adam):
        m, v = state.slots
        t = state.step_count
        c1 = 1.0 - kind.beta1**t
        c2 = 1.0 - kind.beta2**t
        for i, (p, g) in enumerate(zip(params, grads)):
            m[i] = kind.beta1 * m[i] + (1.0 - kind.beta1) * g
            v[i] = kind.beta2 * v[i] + (1.0 - kind.beta2) * g * g
            out.append(p - lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + kind.eps))
    else:
        (sq,) = state.slots
        for i, (p, g) in enumerate(zip(params, grads)):
            sq[i] = kind.alpha * sq[i] + (1.0 - kind.alpha) * g * g
            out.append(p - lr * g / (np.sqrt(sq[i]) + kind.eps))
    return out


def optimizer_from_dict(d: dict) -> OptimizerKind:
    d = dict(d)
    name = d.pop("kind").lower()
    if name == "sgd":
        return SGD(**d)
    if name == "adam":
        if "betas" in d:
            d["beta1"], d["beta2"] = d.pop("betas")
        return Adam(**d)
    if name == "rmsprop":
        return RMSprop(**d)
    raise ConfigurationError(f"unknown optimizer kind {name!r}")


def optimizer_to_dict(kind: OptimizerKind) -> dict:
    name = {SGD: "sgd", Adam: "adam", RMSprop: "rmsprop"}[type(kind)]
    return {"kind": name, **{k: getattr(kind, k) for k in kind.__dataclass_fields__}}


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index chunks covering ``range(n)`` once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
