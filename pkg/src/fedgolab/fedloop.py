"""Federated rounds: sampling, local training, FedAVG, pseudo-labels and server distillation."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ganforge
from .ganforge import ByzantineDiscriminator, FixedSampler, Head
from .numerics import (
    Activation,
    Adam,
    ConfigurationError,
    LossKind,
    MlpModel,
    OptimizerKind,
    RMSprop,
    init_mlp,
    loss_eval,
    make_optimizer,
    minibatches,
    mlp_forward,
    mlp_grad,
    one_hot,
    optimizer_step,
    softmax_stable,
    stream,
)
from .synthdata import (
    LabeledDataset,
    UnlabeledDataset,
    dirichlet_partition,
    make_toy_mixture,
    oracle_grid,
)
from .weighting import WeightingMethod, discriminator_values, weight_matrix

log = logging.getLogger(__name__)

SCENARIOS = ("toy", "g1d1", "g3d2")
DISTILL_SOURCES = ("global", "server", "generator")


@dataclass
class FederationConfig:
    K: int = 4
    C: float = 1.0
    T: int = 1
    client_epochs: int = 2
    server_epochs: int = 2
    batch_size: int = 64
    client_opt: OptimizerKind = field(default_factory=lambda: Adam(lr=1e-3))
    server_opt: OptimizerKind = field(default_factory=lambda: Adam(lr=1e-3))
    lr_schedule: str = "constant"
    weighting: WeightingMethod = field(default_factory=lambda: WeightingMethod.parse("fedgo"))
    scenario: str = "toy"
    distill_source: str = "global"
    byzantine: tuple[int, ...] = ()
    disc_epochs: int = 1
    disc_opt: OptimizerKind = field(default_factory=lambda: RMSprop(lr=1e-3))
    disc_head: Head = Head.DOUBLE_SIGMOID
    hidden: tuple[int, ...] = (64, 64)
    alpha: float = 0.1
    gan_rounds: int = 5
    gan_local_epochs: int = 3
    gan_opt: OptimizerKind = field(default_factory=lambda: Adam(lr=2e-4, beta1=0.5, beta2=0.999))
    distill_size: int = 1200
    grid_n: int = 100
    grid_box: float = 12.0
    record_wall_time: bool = False

    def __post_init__(self):
        self.disc_head = Head(self.disc_head)
        self.byzantine = tuple(int(b) for b in self.byzantine)
        if self.K < 1 or not (0 < self.C <= 1) or math.floor(self.C * self.K) < 1:
            raise ConfigurationError("need K >= 1, C in (0, 1] and floor(C*K) >= 1")
        if self.T < 1 or self.server_epochs < 0 or self.client_epochs < 0 or self.disc_epochs < 0:
            raise ConfigurationError("need T >= 1 and non-negative epoch counts")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}")
        if self.distill_source not in DISTILL_SOURCES:
            raise ConfigurationError(f"distill_source must be one of {DISTILL_SOURCES}")
        if self.scenario == "toy" and self.K != 4:
            raise ConfigurationError("the toy scenario has exactly 4 clients")
        if any(b < 0 or b >= self.K for b in self.byzantine):
            raise ConfigurationError("byzantine client index out of range")


@dataclass
class RoundMetrics:
    round: int
    server_test_accuracy: float
    ensemble_test_accuracy: float
    ensemble_test_loss: float
    distill_kl: float
    wall_ms: float = 0.0


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    server: MlpModel
    client_models: dict[int, MlpModel]
    discriminators: list | None
    generator: object
    weight_log: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------- primitives


def sample_clients(K: int, C: float, seed: int, round_index: int) -> list[int]:
    m = math.floor(C * K)
    if m < 1:
        raise ConfigurationError("floor(C*K) must be at least 1")
    if m == K:
        return list(range(K))
    return sorted(stream(seed, 40, round_index).choice(K, size=m, replace=False).tolist())


def draw_byzantine(K: int, count: int, seed: int) -> tuple[int, ...]:
    """Seeded choice of which ``count`` clients act Byzantine."""
    if not 0 <= count <= K:
        raise ConfigurationError("byzantine count must lie in [0, K]")
    return tuple(sorted(stream(seed, 900).choice(K, size=count, replace=False).tolist()))


def classifier(in_dim: int, n_classes: int, hidden, rng) -> MlpModel:
    dims = [in_dim, *hidden, n_classes]
    return init_mlp(dims, [Activation.RELU] * len(hidden) + [Activation.IDENTITY], rng)


def client_update(server: MlpModel, data: LabeledDataset, epochs: int, opt: OptimizerKind, seed: int,
                  batch_size: int = 64) -> MlpModel | None:
    """Local CrossEntropy training from the server params; ``None`` marks an empty shard."""
    if epochs < 0:
        raise ConfigurationError("epochs must be non-negative")
    if len(data) == 0:
        return None
    model = server.copy()
    if epochs == 0:
        return model
    state = make_optimizer(opt, model.params)
    targets = one_hot(data.labels, model.layer_dims[-1])
    rng = stream(seed, 50)
    for _ in range(epochs):
        for idx in minibatches(len(data), batch_size, rng):
            _, grads = mlp_grad(model, data.points[idx], targets[idx], LossKind.CROSS_ENTROPY)
            model = model.with_params(optimizer_step(state, model.params, grads))
    return model


def fedavg_aggregate(param_sets, sizes):
    """Coordinate-wise mean of parameter lists weighted by client sizes."""
    if not param_sets:
        raise ConfigurationError("nothing to aggregate")
    return ganforge.weighted_param_average(param_sets, sizes)


def pseudo_label(u, client_models, weights) -> np.ndarray:
    """softmax(sum_k w_k(u) * f(u; theta_k)) row by row."""
    weights = np.asarray(weights, dtype=np.float64)
    logits = [mlp_forward(m, u) for m in client_models]
    if weights.ndim == 1:
        weights = np.broadcast_to(weights, (logits[0].shape[0], len(logits)))
    mixed = sum(weights[:, k : k + 1] * z for k, z in enumerate(logits))
    return softmax_stable(mixed)


class Ensemble:
    """Weighted client ensemble over a fixed set of participating clients."""

    def __init__(self, models, method: WeightingMethod, discriminators=None, sizes=None):
        self.models = list(models)
        self.method = method
        self.discriminators = discriminators
        self.sizes = sizes

    def weights(self, x, logits=None) -> np.ndarray:
        logits = logits if logits is not None else [mlp_forward(m, x) for m in self.models]
        vals = discriminator_values(self.method, self.discriminators, x)
        return weight_matrix(self.method, logits, vals, self.sizes)

    def logits(self, x) -> np.ndarray:
        z = [mlp_forward(m, x) for m in self.models]
        w = self.weights(x, z)
        return sum(w[:, k : k + 1] * zk for k, zk in enumerate(z))

    def probs(self, x) -> np.ndarray:
        return softmax_stable(self.logits(x))


def cosine_lr(lr0: float, t: int, T: int) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


def distill_server(server: MlpModel, U: UnlabeledDataset, labeler, epochs: int, opt: OptimizerKind,
                   seed: int, batch_size: int = 64, lr: float | None = None) -> MlpModel:
    """Ensemble distillation: KL(labeler(u) || softmax(server(u))) steps over shuffled batches of U.

    ``labeler`` maps a batch of points to pseudo-label rows and is evaluated live per batch.
    """
    if epochs < 0:
        raise ConfigurationError("epochs must be non-negative")
    if epochs == 0:
        return server
    if len(U) == 0:
        log.warning("empty distillation set; skipping server distillation")
        return server
    state = make_optimizer(opt, server.params)
    rng = stream(seed, 60)
    model = server
    for _ in range(epochs):
        for idx in minibatches(len(U), batch_size, rng):
            u = U.points[idx]
            _, grads = mlp_grad(model, u, labeler(u), LossKind.KL_TO_TARGET)
            model = model.with_params(optimizer_step(state, model.params, grads, lr=lr))
    return model


def mean_kl(model: MlpModel, U: UnlabeledDataset, labeler) -> float:
    if len(U) == 0:
        return 0.0
    return loss_eval(LossKind.KL_TO_TARGET, softmax_stable(mlp_forward(model, U.points)), labeler(U.points))


def evaluate(predict, test: LabeledDataset) -> tuple[float, float]:
    """Accuracy (argmax, ties to lowest index) and mean CrossEntropy of ``predict`` on ``test``.

    ``predict`` is an MlpModel or a callable returning logits.
    """
    if len(test) == 0:
        raise ConfigurationError("empty test set")
    logits = mlp_forward(predict, test.points) if isinstance(predict, MlpModel) else predict(test.points)
    probs = softmax_stable(logits)
    acc = float(np.mean(np.argmax(logits, axis=1) == test.labels))
    loss = loss_eval(LossKind.CROSS_ENTROPY, probs, one_hot(test.labels, probs.shape[1]))
    return acc, loss


# ---------------------------------------------------------------- orchestration


@dataclass
class Prepared:
    clients: list[LabeledDataset]
    generator: object
    distill: UnlabeledDataset
    test: LabeledDataset
    n_classes: int
    dim: int


def prepare(cfg: FederationConfig, seed: int) -> Prepared:
    """Datasets, generator and distillation set for the configured scenario."""
    task = make_toy_mixture(seed)
    test = oracle_grid(cfg.grid_n, cfg.grid_box)
    n_classes = task.spec.n_classes
    if cfg.scenario == "toy":
        clients = task.clients
        gen = FixedSampler(task.server)
    else:
        clients = dirichlet_partition(task.global_data, cfg.K, cfg.alpha, seed)
        gen_rng = stream(seed, 70)
        gen = ganforge.make_generator(2, gen_rng)
        disc = ganforge.make_discriminator(2, gen_rng, cfg.disc_head)
        if cfg.scenario == "g1d1":
            # the server trains the generator on its own unlabeled set
            for r in range(cfg.gan_rounds):
                gen, disc = ganforge.federated_gan_round(gen, disc, [task.server], cfg.gan_local_epochs,
                                                         cfg.gan_opt, seed * 1000 + r, cfg.batch_size)
        else:
            for r in range(cfg.gan_rounds):
                gen, disc = ganforge.federated_gan_round(gen, disc, clients, cfg.gan_local_epochs,
                                                         cfg.gan_opt, seed * 1000 + r, cfg.batch_size)
    if cfg.distill_source == "global":
        U = task.global_data.unlabeled()
    elif cfg.distill_source == "server":
        U = task.server
    else:
        U = ganforge.sample_generator(gen, cfg.distill_size, seed)
    return Prepared(clients, gen, U, test, n_classes, 2)


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def train_discriminators(cfg: FederationConfig, prep: Prepared, seed: int, threads: int = 1):
    def one(k):
        if k in cfg.byzantine:
            return ByzantineDiscriminator(cfg.disc_head)
        return ganforge.train_discriminator(prep.generator, prep.clients[k], cfg.disc_epochs, cfg.disc_opt,
                                            cfg.disc_head, seed=int(stream(seed, 80, k).integers(2**62)),
                                            batch_size=cfg.batch_size, hidden=cfg.hidden)
    return _pool_map(one, list(range(cfg.K)), threads)


def run_experiment(cfg: FederationConfig, seed: int, threads: int = 1, on_round=None,
                   prepared: Prepared | None = None, discriminators=None) -> ExperimentResult:
    """Pre-FL discriminator stage then ``cfg.T`` rounds; deterministic per (cfg, seed).

    ``on_round`` receives each RoundMetrics as soon as it is computed.
    """
    prep = prepared or prepare(cfg, seed)
    method = cfg.weighting
    if discriminators is None and method.needs_discriminators:
        discriminators = train_discriminators(cfg, prep, seed, threads)

    server = classifier(prep.dim, prep.n_classes, cfg.hidden, stream(seed, 90))
    metrics: list[RoundMetrics] = []
    client_models: dict[int, MlpModel] = {}
    for t in range(1, cfg.T + 1):
        start = time.perf_counter()
        active = sample_clients(cfg.K, cfg.C, seed, t)

        def local(k, server=server, t=t):
            return client_update(server, prep.clients[k], cfg.client_epochs, cfg.client_opt,
                                 int(stream(seed, 100, t, k).integers(2**62)), cfg.batch_size)

        updated = _pool_map(local, active, threads)
        kept = [(k, m) for k, m in zip(active, updated) if m is not None]
        if not kept:
            raise ConfigurationError(f"round {t}: every sampled client has an empty shard")
        client_models = dict(kept)
        ks = [k for k, _ in kept]
        sizes = [len(prep.clients[k]) for k in ks]
        server = server.with_params(fedavg_aggregate([m.params for _, m in kept], sizes))

        discs = [discriminators[k] for k in ks] if discriminators is not None else None
        ensemble = Ensemble([client_models[k] for k in ks], method, discs, sizes)

        lr = None
        if cfg.lr_schedule == "cosine":
            lr = cosine_lr(cfg.server_opt.lr, t, cfg.T)
        server = distill_server(server, prep.distill, ensemble.probs, cfg.server_epochs, cfg.server_opt,
                                int(stream(seed, 110, t).integers(2**62)), cfg.batch_size, lr)

        s_acc, _ = evaluate(server, prep.test)
        e_acc, e_loss = evaluate(ensemble.logits, prep.test)
        kl = mean_kl(server, prep.distill, ensemble.probs)
        wall = (time.perf_counter() - start) * 1000.0 if cfg.record_wall_time else 0.0
        m = RoundMetrics(t, s_acc, e_acc, e_loss, kl, wall)
        metrics.append(m)
        if on_round is not None:
            on_round(m)
    return ExperimentResult(metrics, server, client_models, discriminators, prep.generator)
