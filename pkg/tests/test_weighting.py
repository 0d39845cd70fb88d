import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedgolab.ganforge import ByzantineDiscriminator, Head
from fedgolab.numerics import ConfigurationError, stream
from fedgolab.synthdata import make_toy_mixture
from fedgolab.weighting import (
    Rule,
    UndefinedWeightError,
    WeightingMethod,
    analytic_optimal_weights,
    compute_weights,
    fedgo_from_odds,
    weight_matrix,
)

# tests/oracles/toy_density_weights.py
TOY_WEIGHTS_AT_44 = [0.033333333804183685, 0.0333535336126122, 0.0333535336126122, 0.899959598970592]
# tests/oracles/entropy_weights.py
ENTROPY_WEIGHTS = [0.6666666570479497, 0.3333333429520503]


class ConstDisc:
    def __init__(self, value):
        self.value = value

    def prob(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.value)

    def odds(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.value)


def test_uniform_four_clients():
    w = compute_weights(WeightingMethod.parse("uniform"), [0, 0], [np.zeros(3)] * 4)
    assert w.tolist() == [0.25] * 4


def test_fedgo_equal_sizes_odds_one_and_three():
    w = compute_weights(WeightingMethod.parse("fedgo"), [0, 0], [np.zeros(2)] * 2,
                        [ConstDisc(1.0), ConstDisc(3.0)], [10, 10])
    np.testing.assert_allclose(w, [0.25, 0.75])
    np.testing.assert_allclose(fedgo_from_odds([1, 3], [10, 10]), [0.25, 0.75])


def test_entropy_weights_match_scalar_script():
    w = compute_weights(WeightingMethod.parse("entropy"), [0], [np.array([10.0, -10.0]), np.array([0.0, 0.0])])
    np.testing.assert_allclose(w, ENTROPY_WEIGHTS, rtol=1e-12)
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-3)


def test_variance_weights_and_zero_fallback():
    w = compute_weights(WeightingMethod.parse("variance"), [0], [np.array([1.0, -1.0]), np.array([2.0, 0.0])])
    np.testing.assert_allclose(w, [0.5, 0.5])
    w = compute_weights(WeightingMethod.parse("variance"), [0], [np.array([3.0, -3.0]), np.array([1.0, -1.0])])
    np.testing.assert_allclose(w, [0.9, 0.1])
    w = compute_weights(WeightingMethod.parse("variance"), [0], [np.zeros(3), np.ones(3)])
    np.testing.assert_allclose(w, [0.5, 0.5])


def test_domain_aware_normalises_probabilities():
    w = compute_weights(WeightingMethod.parse("domain_aware"), [0], [np.zeros(2)] * 2,
                        [ConstDisc(0.2), ConstDisc(0.6)])
    np.testing.assert_allclose(w, [0.25, 0.75])


def test_missing_discriminators_is_configuration_error():
    with pytest.raises(ConfigurationError):
        compute_weights(WeightingMethod.parse("fedgo"), [0], [np.zeros(2)] * 2, None, [1, 1])
    with pytest.raises(ConfigurationError):
        compute_weights(WeightingMethod.parse("domain_aware"), [0], [np.zeros(2)] * 2, [ConstDisc(0.5)])


def test_unknown_method_and_bad_tau():
    with pytest.raises(ConfigurationError):
        WeightingMethod.parse("median")
    with pytest.raises(ConfigurationError):
        WeightingMethod(Rule.ENTROPY, tau=0.0)


def test_analytic_weights_examples():
    np.testing.assert_allclose(analytic_optimal_weights([0.3, 0.3], [5, 5]), [0.5, 0.5])
    np.testing.assert_allclose(analytic_optimal_weights([0.2, 0.1], [5, 5]), [2 / 3, 1 / 3])
    with pytest.raises(UndefinedWeightError):
        analytic_optimal_weights([0.0, 0.0], [1, 1])


def test_toy_analytic_weights_at_red_corner():
    task = make_toy_mixture(0)
    x = np.array([[4.0, 4.0]])
    dens = [task.client_density(k, x)[0] for k in range(4)]
    np.testing.assert_allclose(analytic_optimal_weights(dens, [300] * 4), TOY_WEIGHTS_AT_44, rtol=1e-12)


def _random_logits(rng, K, n, C):
    return [rng.normal(scale=rng.uniform(0.01, 20), size=(n, C)) for _ in range(K)]


@pytest.mark.parametrize("rule", list(Rule))
def test_simplex_over_ten_thousand_calls(rule):
    rng = stream(7, list(Rule).index(rule))
    method = WeightingMethod(rule)
    # 200 batches of 50 rows = 10^4 weight vectors per method
    for _ in range(200):
        K, C = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        logits = _random_logits(rng, K, 50, C)
        vals = None
        if method.needs_discriminators:
            if rule is Rule.FEDGO:
                vals = [np.exp(rng.uniform(-13, 13, size=50)) for _ in range(K)]
            else:
                vals = [rng.uniform(1e-6, 1 - 1e-6, size=50) for _ in range(K)]
        w = weight_matrix(method, logits, vals, rng.integers(1, 1000, size=K))
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("rule", list(Rule))
@given(seed=st.integers(0, 2**31))
def test_permutation_equivariance(rule, seed):
    rng = stream(seed)
    K = int(rng.integers(2, 6))
    logits = _random_logits(rng, K, 4, 3)
    vals = [rng.uniform(0.05, 0.95, size=4) for _ in range(K)]
    sizes = rng.integers(1, 100, size=K)
    perm = rng.permutation(K)
    method = WeightingMethod(rule)
    w = weight_matrix(method, logits, vals, sizes)
    wp = weight_matrix(method, [logits[i] for i in perm], [vals[i] for i in perm], sizes[perm])
    np.testing.assert_allclose(wp, w[:, perm], rtol=1e-12, atol=1e-15)


@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=6), st.floats(1e-3, 1e3))
def test_fedgo_scale_invariance(odds, c):
    sizes = np.arange(1, len(odds) + 1)
    np.testing.assert_allclose(fedgo_from_odds(np.array(odds) * c, sizes), fedgo_from_odds(odds, sizes), rtol=1e-12)


@pytest.mark.parametrize("head", list(Head))
def test_byzantine_discriminator_keeps_simplex(head):
    x = stream(0).normal(size=(30, 2))
    discs = [ByzantineDiscriminator(head), ConstDisc(1.5), ConstDisc(2.0)]
    for name in ("domain_aware", "fedgo"):
        method = WeightingMethod.parse(name)
        vals = [d.prob(x) if name == "domain_aware" else d.odds(x) for d in discs]
        w = weight_matrix(method, [np.zeros((30, 3))] * 3, vals, [1, 1, 1])
        assert np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0, atol=1e-9)
