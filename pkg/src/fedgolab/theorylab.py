"""Exact and Monte Carlo checks of the ensemble-weighting theory on enumerable settings."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ganforge
from .ganforge import FixedSampler, Head
from .fedloop import Ensemble, FederationConfig, prepare, run_experiment
from .numerics import Adam, ConfigurationError, LossKind, OptimizerKind, mlp_forward, softmax_stable, stream
from .synthdata import (
    DiscreteInstance,
    UnlabeledDataset,
    gaussian_density,
    make_toy_mixture,
    normalise_rows,
    sample_gaussian,
)
from .weighting import analytic_optimal_weights

SLACK_TOL = 1e-9
MAX_PAIRS = 10**7


class Polarity(str, enum.Enum):
    LE = "le"  # x <= t -> 1
    GE = "ge"  # x >= t -> 1


@dataclass
class ThresholdClass:
    """Finite class of 1-D threshold rules on one coordinate."""

    grid: np.ndarray
    axis: int = 0
    polarities: tuple[Polarity, ...] = (Polarity.LE,)
    include_constants: bool = False

    def __post_init__(self):
        self.grid = np.unique(np.asarray(self.grid, dtype=np.float64))
        self.polarities = tuple(Polarity(p) for p in self.polarities)

    @property
    def size(self) -> int:
        return len(self.grid) * len(self.polarities) + 2 * self.include_constants

    def predictions(self, points) -> np.ndarray:
        """0/1 matrix of shape (hypotheses, points)."""
        x = np.asarray(points, dtype=np.float64)
        x = x[:, self.axis] if x.ndim == 2 else x
        rows = []
        for pol in self.polarities:
            if pol is Polarity.LE:
                rows.append(x[None, :] <= self.grid[:, None])
            else:
                rows.append(x[None, :] >= self.grid[:, None])
        if self.include_constants:
            rows.append(np.zeros((1, x.size), dtype=bool))
            rows.append(np.ones((1, x.size), dtype=bool))
        return np.concatenate(rows).astype(np.float64)

    def describe(self, index: int) -> str:
        n = len(self.grid)
        if index < n * len(self.polarities):
            pol = self.polarities[index // n]
            op = "<=" if pol is Polarity.LE else ">="
            return f"x[{self.axis}] {op} {float(self.grid[index % n])!r}"
        return "const0" if index == n * len(self.polarities) else "const1"

    def growth(self, m: int) -> int:
        """Exact growth function for one polarity, conservative 2m for two."""
        return m + 1 if len(self.polarities) == 1 else 2 * m


def midpoint_grid(values) -> np.ndarray:
    """Thresholds realising every distinct one-polarity labeling of ``values``."""
    v = np.unique(np.asarray(values, dtype=np.float64))
    mids = (v[:-1] + v[1:]) / 2.0
    return np.concatenate([[v[0] - 1.0], mids, [v[-1] + 1.0]])


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    slack: float = field(init=False)
    holds: bool = field(init=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.slack = float(self.rhs - self.lhs)
        self.holds = bool(self.slack >= -SLACK_TOL)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


# ---------------------------------------------------------------- losses on predictions

CONVEX_LOSSES = {LossKind.L1_BINARY, LossKind.CROSS_ENTROPY, LossKind.GAN_BCE}


def pointwise_loss(kind: LossKind, pred, y) -> np.ndarray:
    """Loss of probability predictions against labels, elementwise over points.

    Binary predictions are P(class 1); CrossEntropy also accepts (..., C) rows.
    """
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y)
    if kind is LossKind.L1_BINARY:
        return np.abs(pred - y)
    if kind is LossKind.CROSS_ENTROPY and pred.ndim == y.ndim + 1:
        picked = np.take_along_axis(pred, y.astype(np.int64)[..., None], axis=-1)[..., 0]
        return -np.log(np.maximum(picked, 1e-300))
    p = np.clip(pred, 1e-300, 1.0)
    q = np.clip(1.0 - pred, 1e-300, 1.0)
    return -(y * np.log(p) + (1.0 - y) * np.log(q))


def optimal_weights_on_support(instance: DiscreteInstance) -> np.ndarray:
    """w*_k(x) at every support point with p(x) > 0, shape (points, K); zero rows elsewhere."""
    dens = instance.client_masses.T
    w = np.zeros_like(dens)
    alive = instance.mixture > 0
    w[alive] = analytic_optimal_weights(dens[alive], instance.client_sizes)
    return w


def check_ensemble_inequality(instance: DiscreteInstance, predictions, loss: LossKind = LossKind.L1_BINARY) -> BoundReport:
    """L_p(sum_k w*_k h_k) <= sum_k pi_k L_{p_k}(h_k), summed exactly over the support.

    ``predictions`` has shape (K, points) or (K, points, C): each model's
    probability outputs on the support.
    """
    loss = LossKind(loss)
    if loss not in CONVEX_LOSSES:
        # KL here would compare to hard labels, i.e. cross entropy; keep the closed set explicit
        raise ConfigurationError(f"{loss.value} is not an admissible convex label loss")
    h = np.asarray(predictions, dtype=np.float64)
    if h.shape[0] != instance.K or h.shape[1] != instance.support.shape[0]:
        raise ConfigurationError("predictions must be (K, support points[, C])")
    w = optimal_weights_on_support(instance)
    if h.ndim == 3:
        ens = np.einsum("mk,kmc->mc", w, h)
    else:
        ens = (w * h.T).sum(axis=1)
    y = instance.labels
    lhs = float(np.dot(instance.mixture, pointwise_loss(loss, ens, y)))
    per_client = np.array([np.dot(instance.client_masses[k], pointwise_loss(loss, h[k], y)) for k in range(instance.K)])
    rhs = float(np.dot(instance.pi, per_client))
    return BoundReport(lhs, rhs, {"check": "ensemble_inequality", "loss": loss.value, "K": instance.K,
                                  "per_client_loss": per_client})


def _l1_losses(H: np.ndarray, masses: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Expected l1 loss of every hypothesis (rows of H) under each mass row."""
    err = np.abs(H - y[None, :])
    return np.atleast_2d(masses) @ err.T


def verify_theorem2_optimality(instance: DiscreteInstance, cls: ThresholdClass) -> BoundReport:
    """w*-ensemble of per-client loss minimisers versus the best single hypothesis on p."""
    H = cls.predictions(instance.support)
    y = instance.labels.astype(np.float64)
    client_losses = _l1_losses(H, instance.client_masses, y)
    best_k = client_losses.argmin(axis=1)
    global_losses = _l1_losses(H, instance.mixture, y)[0]
    best = int(global_losses.argmin())
    w = optimal_weights_on_support(instance)
    ens = (w * H[best_k].T).sum(axis=1)
    lhs = float(np.dot(instance.mixture, np.abs(ens - y)))
    return BoundReport(lhs, float(global_losses[best]), {
        "check": "optimal_ensemble",
        "client_minimisers": [cls.describe(int(i)) for i in best_k],
        "global_minimiser": cls.describe(best),
    })


# ---------------------------------------------------------------- H-delta-H divergence


def _disagreement(H: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pr_w[h != h'] for every pair of rows of a 0/1 matrix."""
    a = H @ w
    both = (H * w[None, :]) @ H.T
    return a[:, None] + a[None, :] - 2.0 * both


def estimate_h_delta_h(q_points, q_weights, qp_points, qp_weights, cls: ThresholdClass) -> float:
    """2 * max over pairs (h, h') of |Pr_q[h != h'] - Pr_q'[h != h']|, by enumeration.

    Pass ``None`` weights for empirical (uniform) sample weights.
    """
    if cls.size**2 > MAX_PAIRS:
        raise ConfigurationError(f"class of {cls.size} hypotheses gives {cls.size**2} pairs, over {MAX_PAIRS}")
    qw = _weights(q_points, q_weights)
    pw = _weights(qp_points, qp_weights)
    gap = _disagreement(cls.predictions(q_points), qw) - _disagreement(cls.predictions(qp_points), pw)
    return float(2.0 * np.abs(gap).max())


def _weights(points, weights) -> np.ndarray:
    n = np.asarray(points).shape[0]
    if weights is None:
        return np.full(n, 1.0 / n)
    return np.asarray(weights, dtype=np.float64)


def pair_loss(h_a, h_b, weights) -> float:
    """L_q(h, h') under l1 for 0/1 (or soft) prediction vectors."""
    return float(np.dot(weights, np.abs(np.asarray(h_a) - np.asarray(h_b))))


def theorem1_bound_terms(h, ensemble, p_points, p_labels, ps_points, cls: ThresholdClass) -> BoundReport:
    """Decompose the distilled-model bound on empirical distributions.

    ``h`` maps points to {0,1}; ``ensemble`` maps points to [0,1]. The
    divergence is taken over the finite threshold class, which under-estimates
    the divergence over the spanned class, so ``holds`` is informative only.
    """
    hp = np.asarray(h(p_points), dtype=np.float64)
    ep = np.asarray(ensemble(p_points), dtype=np.float64)
    y = np.asarray(p_labels, dtype=np.float64)
    lhs = float(np.mean(np.abs(hp - y)))
    ens_loss = float(np.mean(np.abs(ep - y)))
    gap = float(np.mean(np.abs(np.asarray(h(ps_points)) - np.asarray(ensemble(ps_points)))))
    div = estimate_h_delta_h(p_points, None, ps_points, None, cls)
    return BoundReport(lhs, ens_loss + gap + 0.5 * div, {
        "check": "distillation_bound",
        "ensemble_loss": ens_loss,
        "distill_gap": gap,
        "half_divergence": 0.5 * div,
        "divergence_is_lower_bound": True,
        "asserted": False,
    })


def toy_binary_decomposition(seed: int, cfg: FederationConfig | None = None, axis: int = 0) -> BoundReport:
    """Distillation-bound terms on the toy task restricted to red-versus-rest.

    ``p`` is the global labelled set and ``p_s`` the server's unlabelled set;
    ``h`` is the distilled server thresholded at 1/2 and the ensemble supplies P(red).
    """
    cfg = cfg or FederationConfig()
    prep = prepare(cfg, seed)
    res = run_experiment(cfg, seed, prepared=prep)
    ks = sorted(res.client_models)
    discs = [res.discriminators[k] for k in ks] if res.discriminators is not None else None
    ens = Ensemble([res.client_models[k] for k in ks], cfg.weighting, discs, [len(prep.clients[k]) for k in ks])
    task = make_toy_mixture(seed)
    p_pts, p_y = task.global_data.points, (task.global_data.labels == 0).astype(np.float64)
    ps_pts = task.server.points

    def h(x):
        return (softmax_stable(mlp_forward(res.server, x))[:, 0] >= 0.5).astype(np.float64)

    def soft(x):
        return ens.probs(x)[:, 0]

    cls = ThresholdClass(midpoint_grid(np.concatenate([p_pts[:, axis], ps_pts[:, axis]])), axis=axis,
                         polarities=(Polarity.LE, Polarity.GE))
    rep = theorem1_bound_terms(h, soft, p_pts, p_y, ps_pts, cls)
    rep.meta["seed"] = seed
    return rep


# ---------------------------------------------------------------- generalisation bound


def complexity_term(n: int, delta: float, K: int, growth: int) -> float:
    return (4.0 + math.sqrt(math.log(growth))) / ((delta / K) * math.sqrt(2.0 * n))


def random_threshold_instance(rng, K: int, n_support: int = 32, label_noise: float = 0.2) -> DiscreteInstance:
    """1-D support in [0, 1] labelled by a random threshold with flipped labels."""
    support = np.sort(rng.uniform(0.0, 1.0, n_support))
    labels = (support <= rng.uniform(0.2, 0.8)).astype(np.int64)
    flips = rng.random(n_support) < label_noise
    labels[flips] = 1 - labels[flips]
    masses = normalise_rows(rng.gamma(0.7, size=(K, n_support)) + 1e-12)
    return DiscreteInstance(support, masses, np.ones(K), labels)


@dataclass
class BoundCheckResult:
    violation_rate: float
    median_slack: float
    slacks: list[float]
    trials: int
    delta: float
    K: int
    n_k: int

    def report(self) -> BoundReport:
        # lhs/rhs pair that holds iff the rate stays within the binomial allowance of delta
        allowance = self.delta + 3.0 * math.sqrt(self.delta * (1 - self.delta) / self.trials)
        return BoundReport(self.violation_rate, allowance, {
            "check": "generalisation_bound", "violation_rate": self.violation_rate,
            "median_slack": self.median_slack, "trials": self.trials, "delta": self.delta,
            "K": self.K, "n_k": self.n_k})


def bound_trial(inst: DiscreteInstance, n_k: int, delta: float, rng) -> BoundReport:
    """Sample n_k points per client, pick empirical minimisers and evaluate the bound once."""
    K = inst.K
    cls = ThresholdClass(midpoint_grid(inst.support[:, 0]))
    H = cls.predictions(inst.support)
    y = inst.labels.astype(np.float64)
    chosen, emp = [], []
    for k in range(K):
        draws = rng.choice(len(y), size=n_k, p=inst.client_masses[k])
        emp_mass = np.bincount(draws, minlength=len(y)) / n_k
        losses = _l1_losses(H, emp_mass, y)[0]
        j = int(losses.argmin())
        chosen.append(j)
        emp.append(losses[j])
    w = optimal_weights_on_support(inst)
    ens = (w * H[chosen].T).sum(axis=1)
    lhs = float(np.dot(inst.mixture, np.abs(ens - y)))
    term = complexity_term(n_k, delta, K, cls.growth(2 * n_k))
    rhs = float(np.dot(inst.pi, np.asarray(emp) + term))
    return BoundReport(lhs, rhs, {"check": "generalisation_trial", "complexity_term": term,
                                  "empirical_losses": emp})


def theoremC1_bound_check(n_k: int = 50, delta: float = 0.1, trials: int = 200, seed: int = 0, K: int = 2,
                          n_support: int = 32) -> BoundCheckResult:
    """Monte Carlo rate at which the empirical-minimiser ensemble bound fails."""
    if n_k < 2 or not (0 < delta < 1):
        raise ConfigurationError("need n_k >= 2 and 0 < delta < 1")
    violations, slacks = 0, []
    for trial in range(trials):
        rng = stream(seed, 500, trial)
        inst = random_threshold_instance(rng, K, n_support)
        inst = DiscreteInstance(inst.support, inst.client_masses, np.full(K, n_k), inst.labels)
        rep = bound_trial(inst, n_k, delta, rng)
        slacks.append(rep.slack)
        violations += rep.lhs > rep.rhs + SLACK_TOL
    return BoundCheckResult(violations / trials, float(np.median(slacks)), slacks, trials, delta, K, n_k)


# ---------------------------------------------------------------- optimal discriminator


def gan_objective_argmax(p_data, p_g, resolution: float = 1e-3) -> np.ndarray:
    """Per point, the grid D maximising p_data log D + p_g log(1 - D)."""
    grid = np.arange(1, int(round(1.0 / resolution))) * resolution
    p_data = np.asarray(p_data, dtype=np.float64)[:, None]
    p_g = np.asarray(p_g, dtype=np.float64)[:, None]
    obj = p_data * np.log(grid)[None, :] + p_g * np.log1p(-grid)[None, :]
    return grid[obj.argmax(axis=1)]


def random_discrete_pair(rng, m: int = 5):
    p = rng.gamma(1.0, size=m) + 1e-3
    q = rng.gamma(1.0, size=m) + 1e-3
    return p / p.sum(), q / q.sum()


# ---------------------------------------------------------------- discriminator-weight convergence


@dataclass
class WeightConvergenceSetup:
    means: tuple = ((-3.0, 0.0), (3.0, 0.0), (0.0, 3.0))
    variance: float = 2.0
    sizes: tuple = (600, 400, 800)
    box: float = 8.0
    fake_pool: int = 4000
    eval_points: int = 2000
    batch_size: int = 64
    opt: OptimizerKind = field(default_factory=lambda: Adam(lr=1e-3))


def fedgo_weight_error(epochs: int, seed: int, setup: WeightConvergenceSetup | None = None) -> float:
    """Mean over p_g samples of max_k |w_k^FedGO - w*_k| with SingleSigmoid discriminators."""
    s = setup or WeightConvergenceSetup()
    fake = UnlabeledDataset(stream(seed, 600).uniform(-s.box, s.box, size=(s.fake_pool, 2)))
    gen = FixedSampler(fake)
    discs = []
    for k, (mean, n) in enumerate(zip(s.means, s.sizes)):
        real = UnlabeledDataset(sample_gaussian(stream(seed, 601, k), mean, s.variance, n))
        discs.append(ganforge.train_discriminator(gen, real, epochs, s.opt, Head.SINGLE_SIGMOID,
                                                  seed=seed * 100 + k, batch_size=s.batch_size))
    x = stream(seed, 602).uniform(-s.box, s.box, size=(s.eval_points, 2))
    odds = np.stack([d.odds(x) for d in discs], axis=1)
    w = np.asarray(s.sizes)[None, :] * odds
    w /= w.sum(axis=1, keepdims=True)
    dens = np.stack([gaussian_density(x, m, s.variance) for m in s.means], axis=1)
    w_star = analytic_optimal_weights(dens, s.sizes)
    return float(np.abs(w - w_star).max(axis=1).mean())


# ---------------------------------------------------------------- privacy


class Scenario(str, enum.Enum):
    FEDAVG = "fedavg"
    G1D1 = "g1d1"
    G2D1 = "g2d1"
    G2D2 = "g2d2"
    G3D2 = "g3d2"


@dataclass
class PrivacyLedger:
    scenario: Scenario
    T: int
    T_gan: int = 0
    eps_model: float = 0.0
    eps_disc: float = 0.0
    eps_gen: float = 0.0
    eps_server_model: float = 0.0
    eps_server_gen: float = 0.0

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        budgets = (self.eps_model, self.eps_disc, self.eps_gen, self.eps_server_model, self.eps_server_gen)
        if min(budgets) < 0 or self.T < 0 or self.T_gan < 0:
            raise ConfigurationError("privacy budgets and round counts must be non-negative")


def privacy_ledger(ledger: PrivacyLedger) -> tuple[float, float]:
    """(client-side, server-side) total LDP budget spent under each deployment."""
    client, server = _privacy_totals(ledger)
    return float(client), float(server)


def _privacy_totals(ledger: PrivacyLedger):
    L = ledger
    client = L.T * L.eps_model
    if L.scenario is Scenario.FEDAVG:
        return client, 0.0
    client += L.eps_disc
    if L.scenario is Scenario.G1D1:
        return client, L.eps_server_gen + L.T * L.eps_server_model
    if L.scenario is Scenario.G2D1:
        return client, L.T * L.eps_server_model
    if L.scenario is Scenario.G2D2:
        return client, 0.0
    return L.T_gan * (L.eps_disc + L.eps_gen) + client, 0.0
