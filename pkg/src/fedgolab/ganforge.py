"""Client discriminators, generators, odds and the data-free federated GAN path."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    Activation,
    Adam,
    ConfigurationError,
    MlpModel,
    OptimizerKind,
    backward,
    forward_with_cache,
    init_mlp,
    log_sigmoid,
    make_optimizer,
    minibatches,
    mlp_forward,
    optimizer_step,
    sigmoid,
    stream,
)
from .synthdata import LabeledDataset, UnlabeledDataset, box_muller

SINGLE_SIGMOID_EPS = 1e-6
DOUBLE_SIGMOID_MAX = 1.0 / (1.0 + math.exp(-1.0))

DISC_HIDDEN = (64, 64)
GEN_HIDDEN = (64, 64)

# discriminator defaults for the image-scale setup; the toy path overrides them
DEFAULT_DISC_OPT = Adam(lr=2e-4, beta1=0.5, beta2=0.999)


class Head(str, enum.Enum):
    SINGLE_SIGMOID = "single_sigmoid"
    DOUBLE_SIGMOID = "double_sigmoid"


class DomainError(ValueError):
    pass


def odds_of(d):
    """phi / (1 - phi) for phi strictly inside (0, 1)."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0) or np.any(d >= 1):
        raise DomainError("odds are defined on the open interval (0, 1)")
    out = d / (1.0 - d)
    return float(out) if out.ndim == 0 else out


def head_prob(head: Head, raw, eps: float = SINGLE_SIGMOID_EPS):
    if head is Head.SINGLE_SIGMOID:
        return np.clip(sigmoid(raw), eps, 1.0 - eps)
    return sigmoid(sigmoid(raw))


def head_odds(head: Head, raw, eps: float = SINGLE_SIGMOID_EPS):
    """Odds of the head output computed in closed form from the raw score."""
    if head is Head.SINGLE_SIGMOID:
        lim = math.log((1.0 - eps) / eps)
        return np.exp(np.clip(raw, -lim, lim))
    # logit(sigmoid(s)) = s, so the odds are exp(sigmoid(raw)) in (1, e)
    return np.exp(sigmoid(raw))


def head_bce_grad(head: Head, raw, target):
    """Per-sample BCE(D, target) and its derivative w.r.t. the raw score (clamp ignored)."""
    if head is Head.SINGLE_SIGMOID:
        loss = -(target * log_sigmoid(raw) + (1.0 - target) * log_sigmoid(-raw))
        return loss, sigmoid(raw) - target
    s = sigmoid(raw)
    loss = -(target * log_sigmoid(s) + (1.0 - target) * log_sigmoid(-s))
    return loss, (sigmoid(s) - target) * s * (1.0 - s)


@dataclass
class Discriminator:
    body: MlpModel
    head: Head = Head.DOUBLE_SIGMOID
    eps: float = SINGLE_SIGMOID_EPS

    def __post_init__(self):
        self.head = Head(self.head)
        if self.body.layer_dims[-1] != 1:
            raise ConfigurationError("discriminator body must emit one score")

    def raw(self, x) -> np.ndarray:
        return mlp_forward(self.body, x)[:, 0]

    def prob(self, x) -> np.ndarray:
        return head_prob(self.head, self.raw(x), self.eps)

    def odds(self, x) -> np.ndarray:
        return head_odds(self.head, self.raw(x), self.eps)


@dataclass
class ByzantineDiscriminator:
    """Ignores its input and always reports the head's largest value."""

    head: Head = Head.DOUBLE_SIGMOID
    eps: float = SINGLE_SIGMOID_EPS

    def __post_init__(self):
        self.head = Head(self.head)

    def _max(self) -> float:
        return 1.0 - self.eps if self.head is Head.SINGLE_SIGMOID else DOUBLE_SIGMOID_MAX

    def prob(self, x) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self._max())

    def odds(self, x) -> np.ndarray:
        n = np.atleast_2d(x).shape[0]
        if self.head is Head.SINGLE_SIGMOID:
            return np.full(n, (1.0 - self.eps) / self.eps)
        return np.full(n, math.e)


@dataclass
class MlpGenerator:
    noise_dim: int
    body: MlpModel

    def __post_init__(self):
        if self.body.layer_dims[0] != self.noise_dim:
            raise ConfigurationError("generator body input must equal noise_dim")

    @property
    def data_dim(self) -> int:
        return self.body.layer_dims[-1]

    def noise(self, m: int, rng) -> np.ndarray:
        return box_muller(rng, m * self.noise_dim).reshape(m, self.noise_dim)


@dataclass
class FixedSampler:
    """Generator stand-in that resamples a stored point set."""

    data: UnlabeledDataset

    @property
    def data_dim(self) -> int:
        return self.data.points.shape[1]


Generator = MlpGenerator | FixedSampler


def make_discriminator(data_dim: int, rng, head: Head = Head.DOUBLE_SIGMOID, hidden=DISC_HIDDEN) -> Discriminator:
    dims = [data_dim, *hidden, 1]
    acts = [Activation.RELU] * len(hidden) + [Activation.IDENTITY]
    return Discriminator(init_mlp(dims, acts, rng), head)


def make_generator(data_dim: int, rng, noise_dim: int = 2, hidden=GEN_HIDDEN) -> MlpGenerator:
    dims = [noise_dim, *hidden, data_dim]
    acts = [Activation.RELU] * len(hidden) + [Activation.IDENTITY]
    return MlpGenerator(noise_dim, init_mlp(dims, acts, rng))


def _draw(gen, m: int, rng) -> np.ndarray:
    if isinstance(gen, FixedSampler):
        pts = gen.data.points
        if m and pts.shape[0] == 0:
            raise ConfigurationError("cannot sample from an empty fixed set")
        return pts[rng.integers(0, pts.shape[0], size=m)] if m else np.empty((0, gen.data_dim))
    return mlp_forward(gen.body, gen.noise(m, rng)) if m else np.empty((0, gen.data_dim))


def sample_generator(gen, m: int, seed: int) -> UnlabeledDataset:
    if m < 0:
        raise ConfigurationError("sample count must be non-negative")
    return UnlabeledDataset(_draw(gen, m, stream(seed, 20)))


def _disc_step(disc: Discriminator, opt_state, real: np.ndarray, fake: np.ndarray) -> float:
    x = np.concatenate([real, fake])
    target = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    out, cache = forward_with_cache(disc.body, x)
    loss, dz = head_bce_grad(disc.head, out[:, 0], target)
    # -[log D(real) + log(1 - D(fake))] averaged over the batch
    scale = 1.0 / len(real)
    grads, _ = backward(disc.body, cache, (dz * scale)[:, None])
    disc.body = disc.body.with_params(optimizer_step(opt_state, disc.body.params, grads))
    return float(loss.sum() * scale)


def gan_loss(disc: Discriminator, real: np.ndarray, fake: np.ndarray) -> float:
    """Mean vanilla-GAN discriminator loss on the given real and fake samples."""
    lreal, _ = head_bce_grad(disc.head, disc.raw(real), np.ones(len(real)))
    lfake, _ = head_bce_grad(disc.head, disc.raw(fake), np.zeros(len(fake)))
    return float(lreal.mean() + lfake.mean())


def train_discriminator(
    gen,
    real: LabeledDataset | UnlabeledDataset,
    epochs: int,
    opt: OptimizerKind = DEFAULT_DISC_OPT,
    head: Head = Head.DOUBLE_SIGMOID,
    seed: int = 0,
    batch_size: int = 64,
    hidden=DISC_HIDDEN,
    history: list | None = None,
) -> Discriminator:
    """Train a fresh discriminator of ``real`` against samples of ``gen``.

    If ``history`` is a list, per-step losses are appended to it.
    """
    if epochs < 0:
        raise ConfigurationError("epochs must be non-negative")
    pts = real.points
    if len(pts) == 0:
        raise ConfigurationError("discriminator needs a non-empty real dataset")
    disc = make_discriminator(pts.shape[1], stream(seed, 10), head, hidden)
    state = make_optimizer(opt, disc.body.params)
    order_rng, fake_rng = stream(seed, 11), stream(seed, 12)
    for _ in range(epochs):
        for idx in minibatches(len(pts), batch_size, order_rng):
            loss = _disc_step(disc, state, pts[idx], _draw(gen, len(idx), fake_rng))
            if history is not None:
                history.append(loss)
    return disc


def analytic_optimal_discriminator(p_data, p_g):
    """p_data / (p_data + p_g) elementwise."""
    p_data = np.asarray(p_data, dtype=np.float64)
    p_g = np.asarray(p_g, dtype=np.float64)
    if np.any(p_data < 0) or np.any(p_g < 0):
        raise DomainError("densities must be non-negative")
    total = p_data + p_g
    if np.any(total == 0):
        raise DomainError("optimal discriminator undefined where both densities vanish")
    out = p_data / total
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- federated GAN


def _gen_step(gen: MlpGenerator, disc: Discriminator, state, m: int, rng) -> None:
    z = gen.noise(m, rng)
    fake, gcache = forward_with_cache(gen.body, z)
    out, dcache = forward_with_cache(disc.body, fake)
    # non-saturating generator loss -log D(G(z))
    _, dz = head_bce_grad(disc.head, out[:, 0], np.ones(m))
    _, dx = backward(disc.body, dcache, (dz / m)[:, None])
    grads, _ = backward(gen.body, gcache, dx)
    gen.body = gen.body.with_params(optimizer_step(state, gen.body.params, grads))


def local_gan_training(gen: MlpGenerator, disc: Discriminator, data, epochs: int, opt: OptimizerKind,
                       rng, batch_size: int = 64):
    """Alternating discriminator / generator updates on copies of ``gen`` and ``disc``."""
    gen = MlpGenerator(gen.noise_dim, gen.body.copy())
    disc = Discriminator(disc.body.copy(), disc.head, disc.eps)
    gstate = make_optimizer(opt, gen.body.params)
    dstate = make_optimizer(opt, disc.body.params)
    pts = data.points
    for _ in range(epochs):
        for idx in minibatches(len(pts), batch_size, rng):
            _disc_step(disc, dstate, pts[idx], _draw(gen, len(idx), rng))
            _gen_step(gen, disc, gstate, len(idx), rng)
    return gen, disc


def weighted_param_average(param_sets, sizes):
    sizes = np.asarray(sizes, dtype=np.float64)
    w = sizes / sizes.sum()
    out = []
    for j in range(len(param_sets[0])):
        shape = param_sets[0][j].shape
        for ps in param_sets:
            if ps[j].shape != shape:
                raise ConfigurationError(f"parameter {j}: shape {ps[j].shape} vs {shape}")
        acc = np.zeros(shape)
        for wk, ps in zip(w, param_sets):
            acc = acc + wk * ps[j]
        out.append(acc)
    return out


def federated_gan_round(global_gen: MlpGenerator, global_disc: Discriminator, clients, local_epochs: int,
                        opt: OptimizerKind = Adam(lr=2e-4, beta1=0.5, beta2=0.999), seed: int = 0,
                        batch_size: int = 64):
    """One FedGAN round: local GAN training per client, then size-weighted averaging."""
    if not clients:
        raise ConfigurationError("federated GAN round needs at least one client")
    gens, discs, sizes = [], [], []
    for k, data in enumerate(clients):
        if len(data) == 0:
            continue
        g, d = local_gan_training(global_gen, global_disc, data, local_epochs, opt, stream(seed, 30, k), batch_size)
        gens.append(g.body.params)
        discs.append(d.body.params)
        sizes.append(len(data))
    new_gen = MlpGenerator(global_gen.noise_dim, global_gen.body.with_params(weighted_param_average(gens, sizes)))
    new_disc = Discriminator(global_disc.body.with_params(weighted_param_average(discs, sizes)),
                             global_disc.head, global_disc.eps)
    return new_gen, new_disc
