import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedgolab import suites
from fedgolab import theorylab as tl
from fedgolab.numerics import ConfigurationError, LossKind, stream
from fedgolab.synthdata import DiscreteInstance


def _naive_inequality_terms(inst, preds):
    """Both sides of the ensemble inequality, recomputed with plain loops."""
    K, m = preds.shape
    total = sum(float(n) for n in inst.client_sizes)
    pi = [float(n) / total for n in inst.client_sizes]
    lhs = 0.0
    for j in range(m):
        mix = sum(pi[k] * inst.client_masses[k, j] for k in range(K))
        if mix == 0:
            continue
        ens = sum(pi[k] * inst.client_masses[k, j] / mix * preds[k, j] for k in range(K))
        lhs += mix * abs(ens - inst.labels[j])
    rhs = 0.0
    for k in range(K):
        for j in range(m):
            rhs += pi[k] * inst.client_masses[k, j] * abs(preds[k, j] - inst.labels[j])
    return lhs, rhs


def test_identical_clients_give_equality():
    masses = [[0.25, 0.25, 0.5]] * 3
    inst = DiscreteInstance([0.0, 1.0, 2.0], masses, [1, 1, 1], [0, 1, 1])
    pred = np.array([0.3, 0.6, 0.9])
    rep = tl.check_ensemble_inequality(inst, np.tile(pred, (3, 1)))
    assert rep.slack == pytest.approx(0.0, abs=1e-15)


def test_disjoint_perfect_clients_give_zero_lhs():
    inst = DiscreteInstance([0.0, 1.0], [[1, 0], [0, 1]], [1, 1], [1, 0])
    rep = tl.check_ensemble_inequality(inst, np.array([[1.0, 0.3], [0.8, 0.0]]))
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_inequality_matches_naive_oracle_on_500_instances():
    for i in range(500):
        inst, preds = suites.random_mlp_instance(stream(0, 700, i))
        rep = tl.check_ensemble_inequality(inst, preds)
        lhs, rhs = _naive_inequality_terms(inst, preds)
        assert rep.lhs == pytest.approx(lhs, abs=1e-12)
        assert rep.rhs == pytest.approx(rhs, abs=1e-12)
        assert rep.holds


def test_inequality_with_cross_entropy_rows():
    rng = stream(3)
    inst, _ = suites.random_mlp_instance(rng)
    preds = rng.dirichlet([1, 1], size=(inst.K, len(inst.labels)))
    assert tl.check_ensemble_inequality(inst, preds, LossKind.CROSS_ENTROPY).holds


def test_kl_is_not_an_admissible_loss():
    inst = DiscreteInstance([0.0], [[1.0]], [1], [0])
    with pytest.raises(ConfigurationError):
        tl.check_ensemble_inequality(inst, np.array([[0.5]]), LossKind.KL_TO_TARGET)


def test_single_client_optimal_ensemble_is_the_minimiser():
    rng = stream(5)
    inst = tl.random_threshold_instance(rng, 1, n_support=12)
    cls = tl.ThresholdClass(tl.midpoint_grid(inst.support), polarities=("le", "ge"), include_constants=True)
    rep = tl.verify_theorem2_optimality(inst, cls)
    assert rep.lhs == pytest.approx(rep.rhs, abs=1e-15)


def test_optimal_ensemble_on_200_instances_and_strict_gap():
    rows = list(suites.theorem2())
    assert len(rows) == 201 and all(r["holds"] for r in rows)
    assert rows[-1]["slack"] > 0.05


def test_threshold_class_descriptions():
    cls = tl.ThresholdClass([0.5, 1.5], polarities=("le", "ge"), include_constants=True)
    assert cls.size == 6
    assert cls.describe(0) == "x[0] <= 0.5" and cls.describe(3) == "x[0] >= 1.5"
    assert cls.describe(4) == "const0" and cls.describe(5) == "const1"
    assert cls.growth(10) == 20


def test_hdiv_examples():
    q = stream(1).normal(size=30)
    cls = tl.ThresholdClass(tl.midpoint_grid(q), include_constants=True)
    assert tl.estimate_h_delta_h(q, None, q, None, cls) == 0.0
    cls = tl.ThresholdClass([0.5], include_constants=True)
    assert tl.estimate_h_delta_h(np.array([0.0]), None, np.array([1.0]), None, cls) == 2.0


@given(st.integers(0, 10_000))
def test_hdiv_symmetric_and_bounded(seed):
    rng = stream(seed)
    q, qp = rng.normal(size=12), rng.normal(rng.uniform(-2, 2), size=9)
    cls = tl.ThresholdClass(tl.midpoint_grid(np.concatenate([q, qp])), polarities=("le", "ge"))
    d = tl.estimate_h_delta_h(q, None, qp, None, cls)
    assert d == pytest.approx(tl.estimate_h_delta_h(qp, None, q, None, cls), abs=1e-12)
    assert 0.0 <= d <= 2.0 + 1e-12


def test_hdiv_refuses_huge_classes():
    cls = tl.ThresholdClass(np.arange(4000.0))
    with pytest.raises(ConfigurationError, match="pairs"):
        tl.estimate_h_delta_h(np.zeros(2), None, np.zeros(2), None, cls)


def test_bound_terms_with_identical_server_data():
    x = stream(2).normal(size=50)
    y = (x <= 0).astype(float)
    cls = tl.ThresholdClass(tl.midpoint_grid(x), polarities=("le", "ge"))

    def h(z):
        return (np.asarray(z) <= 0.2).astype(float)

    def soft(z):
        return (np.asarray(z) <= 0).astype(float)

    rep = tl.theorem1_bound_terms(h, soft, x, y, x, cls)
    assert rep.meta["half_divergence"] == 0.0
    assert rep.holds


@pytest.mark.parametrize("seed", range(5))
def test_toy_decomposition_slack_nonnegative(seed):
    rep = tl.toy_binary_decomposition(seed)
    assert rep.slack >= 0, rep.meta


def test_generalisation_bound_rate_within_allowance():
    res = tl.theoremC1_bound_check(n_k=50, delta=0.1, trials=200, seed=0)
    assert res.violation_rate <= 0.164
    assert res.report().holds


def test_generalisation_bound_slack_shrinks_with_sample_size():
    med = [tl.theoremC1_bound_check(n_k=n, trials=50, seed=1).median_slack for n in (50, 500, 5000)]
    assert med[0] > med[1] > med[2] > 0


def test_generalisation_bound_point_mass_single_client():
    inst = DiscreteInstance([0.3, 0.7], [[1.0, 0.0]], [20], [1, 0])
    rep = tl.bound_trial(inst, 20, 0.1, stream(0))
    assert rep.lhs == 0.0
    assert rep.slack == pytest.approx(rep.meta["complexity_term"])


def test_generalisation_bound_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        tl.theoremC1_bound_check(n_k=1)
    with pytest.raises(ConfigurationError):
        tl.theoremC1_bound_check(delta=1.0)


@pytest.mark.parametrize("name,expected", sorted(suites.PRIVACY_EXPECTED.items()))
def test_privacy_examples(name, expected):
    ledger = tl.PrivacyLedger(name, T=100, T_gan=5, eps_model=1, eps_disc=1, eps_gen=1,
                              eps_server_model=1, eps_server_gen=1)
    assert tl.privacy_ledger(ledger) == expected


@pytest.mark.parametrize("scenario", list(tl.Scenario))
def test_privacy_zero_budgets(scenario):
    assert tl.privacy_ledger(tl.PrivacyLedger(scenario, T=50, T_gan=3)) == (0.0, 0.0)


@given(st.sampled_from(list(tl.Scenario)), st.integers(0, 200), st.integers(0, 10),
       st.lists(st.floats(0, 10), min_size=5, max_size=5), st.floats(0, 10))
def test_privacy_linear_in_budgets(scenario, T, T_gan, eps, c):
    a = tl.privacy_ledger(tl.PrivacyLedger(scenario, T, T_gan, *eps))
    b = tl.privacy_ledger(tl.PrivacyLedger(scenario, T, T_gan, *[c * e for e in eps]))
    np.testing.assert_allclose(b, np.multiply(c, a), rtol=1e-12, atol=1e-9)


def test_privacy_rejects_negative_budget():
    with pytest.raises(ConfigurationError):
        tl.PrivacyLedger("g1d1", T=1, eps_model=-1.0)


def test_gan_argmax_example():
    assert tl.gan_objective_argmax([0.5], [0.5])[0] == pytest.approx(0.5)


def test_weight_error_shrinks_with_training():
    errs = [np.median([tl.fedgo_weight_error(e, s) for s in range(5)]) for e in (1, 5, 30)]
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] <= 0.15


def test_report_json_is_standard():
    rep = tl.BoundReport(0.1, 0.3, {"arr": np.arange(2), "mode": tl.Polarity.LE})
    text = rep.to_json()
    assert '"holds": true' in text and '"arr": [0, 1]' in text and "Infinity" not in text
