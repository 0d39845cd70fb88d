"""Toy Gaussian-mixture task, Dirichlet non-IID splits and exact discrete instances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ConfigurationError, stream

RED, BLUE, GREEN = 0, 1, 2
CLASS_NAMES = ("red", "blue", "green")

TOY_VARIANCE = 3.0
TOY_PER_COMPONENT = 300
TOY_HOME = 270
TOY_FOREIGN = 10
TOY_SERVER_POINTS = 300
TOY_BOX = 12.0


class InfeasiblePartitionError(ValueError):
    pass


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("points and labels differ in length")
        if np.any(self.labels < 0):
            raise ConfigurationError("labels must be non-negative")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1]) if self.points.ndim == 2 else 0

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.points[idx], self.labels[idx])

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.points.copy())


@dataclass
class UnlabeledDataset:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points.reshape(-1, 1) if self.points.size else self.points.reshape(0, 0)
        if not np.all(np.isfinite(self.points)):
            raise ConfigurationError("unlabeled points must be finite")

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class MixtureComponent:
    mean: tuple[float, ...]
    variance: float
    label: int
    count: int


@dataclass
class GaussianMixtureSpec:
    components: list[MixtureComponent]

    def __post_init__(self):
        labels = sorted({c.label for c in self.components})
        if labels != list(range(len(labels))):
            raise ConfigurationError("class labels must be contiguous from 0")
        for c in self.components:
            if c.variance <= 0 or c.count <= 0:
                raise ConfigurationError("component variance and count must be positive")

    @property
    def n_classes(self) -> int:
        return 1 + max(c.label for c in self.components)

    def density(self, x, weights=None) -> np.ndarray:
        """Mixture density at rows of ``x``; ``weights`` default to component counts."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if weights is None:
            weights = np.array([c.count for c in self.components], dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64) / np.sum(weights)
        out = np.zeros(x.shape[0])
        for w, c in zip(weights, self.components):
            out += w * gaussian_density(x, c.mean, c.variance)
        return out


def gaussian_density(x, mean, variance: float) -> np.ndarray:
    """Isotropic Gaussian density at rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    sq = ((x - np.asarray(mean, dtype=np.float64)) ** 2).sum(axis=1)
    return np.exp(-0.5 * sq / variance) / (2.0 * math.pi * variance) ** (d / 2)


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normal draws built from pairs of uniforms."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])
    return z[:n]


def sample_gaussian(rng, mean, variance: float, n: int) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    z = box_muller(rng, n * mean.size).reshape(n, mean.size)
    return mean + math.sqrt(variance) * z


def toy_spec() -> GaussianMixtureSpec:
    v, n = TOY_VARIANCE, TOY_PER_COMPONENT
    return GaussianMixtureSpec([
        MixtureComponent((4.0, 4.0), v, RED, n),
        MixtureComponent((-4.0, 4.0), v, BLUE, n),
        MixtureComponent((-4.0, -4.0), v, RED, n),
        MixtureComponent((4.0, -4.0), v, GREEN, n),
    ])


# home component index (into toy_spec) for clients 1..4: 3rd, 4th, 2nd, 1st quadrant
TOY_CLIENT_HOME = (2, 3, 1, 0)


def quadrant_oracle(points) -> np.ndarray:
    """Red on the 1st/3rd quadrants, Blue on the 2nd, Green on the 4th."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    right = p[:, 0] >= 0
    up = p[:, 1] >= 0
    labels = np.full(p.shape[0], RED, dtype=np.int64)
    labels[~right & up] = BLUE
    labels[right & ~up] = GREEN
    return labels


@dataclass
class ToyTask:
    spec: GaussianMixtureSpec
    global_data: LabeledDataset
    clients: list[LabeledDataset]
    server: UnlabeledDataset
    oracle: object = field(default=quadrant_oracle)

    def client_density(self, k: int, x) -> np.ndarray:
        """Closed-form density of client ``k``'s data distribution."""
        home = TOY_CLIENT_HOME[k]
        w = [TOY_HOME if j == home else TOY_FOREIGN for j in range(len(self.spec.components))]
        return self.spec.density(x, w)


def make_toy_mixture(seed: int) -> ToyTask:
    spec = toy_spec()
    comp_points = []
    for j, c in enumerate(spec.components):
        comp_points.append(sample_gaussian(stream(seed, 1, j), c.mean, c.variance, c.count))
    global_points = np.concatenate(comp_points)
    global_labels = np.concatenate([np.full(c.count, c.label) for c in spec.components])

    # each component: first 270 rows go home, then three blocks of 10 to the others in client order
    offsets = np.arange(len(spec.components)) * TOY_PER_COMPONENT
    cursor = {j: TOY_HOME for j in range(len(spec.components))}
    clients = []
    for k, home in enumerate(TOY_CLIENT_HOME):
        idx = [np.arange(offsets[home], offsets[home] + TOY_HOME)]
        for j in range(len(spec.components)):
            if j == home:
                continue
            idx.append(np.arange(offsets[j] + cursor[j], offsets[j] + cursor[j] + TOY_FOREIGN))
            cursor[j] += TOY_FOREIGN
        idx = np.concatenate(idx)
        clients.append(LabeledDataset(global_points[idx], global_labels[idx]))

    server = stream(seed, 2).uniform(-TOY_BOX, TOY_BOX, size=(TOY_SERVER_POINTS, 2))
    return ToyTask(spec, LabeledDataset(global_points, global_labels), clients, UnlabeledDataset(server))


def sample_mixture(spec: GaussianMixtureSpec, n: int, rng) -> LabeledDataset:
    """``n`` draws from the mixture with component probabilities proportional to counts."""
    w = np.array([c.count for c in spec.components], dtype=np.float64)
    comp = rng.choice(len(w), size=n, p=w / w.sum())
    pts = np.empty((n, len(spec.components[0].mean)))
    for j, c in enumerate(spec.components):
        sel = np.flatnonzero(comp == j)
        pts[sel] = sample_gaussian(rng, c.mean, c.variance, sel.size)
    labels = np.array([spec.components[j].label for j in comp], dtype=np.int64)
    return LabeledDataset(pts, labels)


def oracle_grid(n: int = 100, box: float = TOY_BOX) -> LabeledDataset:
    """``n``x``n`` lattice over ``[-box, box]^2`` labeled by the quadrant rule."""
    axis = np.linspace(-box, box, n)
    xx, yy = np.meshgrid(axis, axis)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return LabeledDataset(pts, quadrant_oracle(pts))


# ---------------------------------------------------------------- dirichlet


def largest_remainder(total: int, shares) -> np.ndarray:
    shares = np.asarray(shares, dtype=np.float64)
    raw = shares / shares.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # ties go to the lower index
        order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def _dirichlet(rng, alpha: float, k: int) -> np.ndarray:
    q = rng.dirichlet(np.full(k, alpha))
    if not np.all(np.isfinite(q)) or q.sum() <= 0:
        q = np.zeros(k)
        q[rng.integers(k)] = 1.0
    return q


def dirichlet_partition(dataset: LabeledDataset, K: int, alpha: float, seed: int) -> list[LabeledDataset]:
    """Split per class with Dir(alpha) shares and largest-remainder rounding."""
    n = len(dataset)
    if K < 1 or alpha <= 0:
        raise ConfigurationError("need K >= 1 and alpha > 0")
    if K > n:
        raise InfeasiblePartitionError(f"cannot give {K} clients a sample each from {n} points")
    rng = stream(seed, 3)
    shards: list[list[int]] = [[] for _ in range(K)]
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(idx.size)]
        counts = largest_remainder(idx.size, _dirichlet(rng, alpha, K))
        start = 0
        for k, m in enumerate(counts):
            shards[k].extend(idx[start : start + m].tolist())
            start += m
    while True:
        empty = [k for k in range(K) if not shards[k]]
        if not empty:
            break
        donor = max(range(K), key=lambda k: (len(shards[k]), -k))
        shards[empty[0]].append(shards[donor].pop())
    return [dataset.subset(sorted(s)) for s in shards]


def label_entropy(dataset: LabeledDataset, n_classes: int) -> float:
    if len(dataset) == 0:
        return 0.0
    counts = np.bincount(dataset.labels, minlength=n_classes).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------- discrete instances


@dataclass
class DiscreteInstance:
    support: np.ndarray
    client_masses: np.ndarray
    client_sizes: np.ndarray
    labels: np.ndarray
    mixture: np.ndarray = field(init=False)

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.float64)
        if self.support.ndim == 1:
            self.support = self.support[:, None]
        self.client_masses = np.atleast_2d(np.asarray(self.client_masses, dtype=np.float64))
        self.client_sizes = np.asarray(self.client_sizes, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        m = self.support.shape[0]
        if self.client_masses.shape[1] != m or self.labels.shape[0] != m:
            raise ConfigurationError("support, masses and labels disagree on support size")
        if self.client_masses.shape[0] != self.client_sizes.shape[0]:
            raise ConfigurationError("one size per client required")
        if np.any(self.client_masses < 0) or np.any(np.abs(self.client_masses.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigurationError("each client mass row must be non-negative and sum to 1")
        if np.any(self.client_sizes < 0) or self.client_sizes.sum() <= 0:
            raise ConfigurationError("client sizes must be non-negative with positive total")
        self.mixture = self.pi @ self.client_masses

    @property
    def K(self) -> int:
        return int(self.client_masses.shape[0])

    @property
    def pi(self) -> np.ndarray:
        return self.client_sizes / self.client_sizes.sum()


def normalise_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    m = m / m.sum(axis=1, keepdims=True)
    # push the rounding residue onto the largest entry so rows sum to 1 tightly
    resid = 1.0 - m.sum(axis=1)
    m[np.arange(m.shape[0]), m.argmax(axis=1)] += resid
    return m


def make_discrete_instance(spec: dict, seed: int) -> DiscreteInstance:
    """Build an instance from explicit fields or draw a random one.

    ``spec`` either carries ``support``, ``client_masses``, ``client_sizes``
    and ``labels`` verbatim, or ``K``, ``n_support``, ``dim`` (and optionally
    ``n_classes``, ``concentration``) for a random instance.
    """
    if "client_masses" in spec:
        return DiscreteInstance(spec["support"], spec["client_masses"], spec["client_sizes"], spec["labels"])
    rng = stream(seed, 4)
    K, m = int(spec["K"]), int(spec["n_support"])
    dim = int(spec.get("dim", 1))
    support = rng.uniform(-1.0, 1.0, size=(m, dim))
    if dim == 1:
        support = np.sort(support, axis=0)
    masses = rng.gamma(float(spec.get("concentration", 0.5)), size=(K, m)) + 1e-12
    sizes = rng.integers(1, 100, size=K)
    labels = rng.integers(0, int(spec.get("n_classes", 2)), size=m)
    return DiscreteInstance(support, normalise_rows(masses), sizes, labels)


# ---------------------------------------------------------------- csv


def write_csv(dataset: LabeledDataset | UnlabeledDataset, path) -> None:
    pts = dataset.points
    labeled = isinstance(dataset, LabeledDataset)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{i}" for i in range(pts.shape[1])] + (["label"] if labeled else [])
        w.writerow(header)
        for i in range(pts.shape[0]):
            row = [repr(float(v)) for v in pts[i]]
            if labeled:
                row.append(str(int(dataset.labels[i])))
            w.writerow(row)


def read_csv(path) -> LabeledDataset | UnlabeledDataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    labeled = header[-1] == "label"
    d = len(header) - int(labeled)
    pts = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    if labeled:
        return LabeledDataset(pts, np.array([int(r[-1]) for r in body], dtype=np.int64))
    return UnlabeledDataset(pts)
