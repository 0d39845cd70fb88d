"""Per-point client weights for pseudo-labeling."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import ConfigurationError, softmax_stable


class Rule(str, enum.Enum):
    UNIFORM = "uniform"
    VARIANCE = "variance"
    ENTROPY = "entropy"
    DOMAIN_AWARE = "domain_aware"
    FEDGO = "fedgo"


@dataclass(frozen=True)
class WeightingMethod:
    rule: Rule
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        if self.tau <= 0:
            raise ConfigurationError("entropy temperature must be positive")

    @classmethod
    def parse(cls, name: str, tau: float = 1.0) -> "WeightingMethod":
        try:
            return cls(Rule(name), tau)
        except ValueError:
            raise ConfigurationError(
                f"unknown weighting {name!r}; expected one of {[r.value for r in Rule]}"
            ) from None

    @property
    def needs_discriminators(self) -> bool:
        return self.rule in (Rule.DOMAIN_AWARE, Rule.FEDGO)

    def __str__(self) -> str:
        return self.rule.value


class UndefinedWeightError(ValueError):
    pass


def _normalise(scores: np.ndarray) -> np.ndarray:
    return scores / scores.sum(axis=1, keepdims=True)


def weight_matrix(method: WeightingMethod, client_logits, disc_values=None, sizes=None) -> np.ndarray:
    """Weights for every row of a batch, shape (batch, clients).

    ``client_logits`` is a list of (batch, classes) arrays, one per client.
    ``disc_values`` holds per-client discriminator outputs D_k(x) for
    DomainAware and odds Phi_k(x) for FedGO, as a list of (batch,) arrays.
    """
    if len(client_logits) == 0:
        raise ConfigurationError("need at least one client")
    n_clients = len(client_logits)
    n_rows = np.asarray(client_logits[0]).shape[0]
    rule = method.rule
    if rule is Rule.UNIFORM:
        return np.full((n_rows, n_clients), 1.0 / n_clients)
    if rule is Rule.VARIANCE:
        var = np.stack([np.var(np.asarray(z, dtype=np.float64), axis=1) for z in client_logits], axis=1)
        out = np.full_like(var, 1.0 / n_clients)
        ok = var.sum(axis=1) > 0
        out[ok] = _normalise(var[ok])
        return out
    if rule is Rule.ENTROPY:
        ent = []
        for z in client_logits:
            p = softmax_stable(z)
            ent.append(-(p * np.log(np.where(p > 0, p, 1.0))).sum(axis=1))
        score = -np.stack(ent, axis=1) / method.tau
        # entropies are bounded by ln(C), so shifting by the row max is exact and safe
        return _normalise(np.exp(score - score.max(axis=1, keepdims=True)))
    if disc_values is None or len(disc_values) != n_clients:
        raise ConfigurationError(f"{rule.value} weighting needs one discriminator per client")
    vals = np.stack([np.asarray(v, dtype=np.float64) for v in disc_values], axis=1)
    if rule is Rule.DOMAIN_AWARE:
        return _normalise(vals)
    if sizes is None or len(sizes) != n_clients:
        raise ConfigurationError("fedgo weighting needs one size per client")
    return _normalise(np.asarray(sizes, dtype=np.float64)[None, :] * vals)


def discriminator_values(method: WeightingMethod, discriminators, x) -> list[np.ndarray] | None:
    """What ``weight_matrix`` expects from the discriminators for this method."""
    if not method.needs_discriminators:
        return None
    if discriminators is None:
        raise ConfigurationError(f"{method.rule.value} weighting needs discriminators")
    if method.rule is Rule.DOMAIN_AWARE:
        return [d.prob(x) for d in discriminators]
    return [d.odds(x) for d in discriminators]


def compute_weights(method: WeightingMethod, x, client_logits, discriminators=None, sizes=None) -> np.ndarray:
    """Weight vector for the single point ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    logits = [np.atleast_2d(np.asarray(z, dtype=np.float64)) for z in client_logits]
    if method.needs_discriminators and (discriminators is None or len(discriminators) != len(logits)):
        raise ConfigurationError(f"{method.rule.value} weighting needs one discriminator per client")
    vals = discriminator_values(method, discriminators, x)
    return weight_matrix(method, logits, vals, sizes)[0]


def fedgo_from_odds(odds, sizes) -> np.ndarray:
    """n_k * Phi_k / sum_i n_i * Phi_i for a single point."""
    s = np.asarray(sizes, dtype=np.float64) * np.asarray(odds, dtype=np.float64)
    return s / s.sum()


def analytic_optimal_weights(densities, sizes) -> np.ndarray:
    """pi_k p_k(x) / sum_i pi_i p_i(x); ``densities`` may be (K,) or (batch, K)."""
    dens = np.asarray(densities, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(dens < 0) or np.any(sizes <= 0):
        raise ConfigurationError("densities must be non-negative and sizes positive")
    scores = dens * (sizes / sizes.sum())
    total = scores.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise UndefinedWeightError("optimal weights undefined outside the support of p")
    return scores / total
