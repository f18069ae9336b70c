import itertools

import numpy as np
import pytest
from conftest import random_dags
from oracles import brute_d_separated
from scipy import stats
from scipy.special import expit

from effectgate.citest import fisher_z
from effectgate.exceptions import EffectGateError
from effectgate.graph import CausalGraph, descendants
from effectgate.synth import (
    SCENARIOS,
    SELF_SELECTION_TARGETS,
    Mechanism,
    ScmSpec,
    domain_graph,
    poisson_quantile,
    random_linear_scm,
    sample,
    sample_replication,
    scenario,
    true_ate,
    true_ate_se,
    with_seed,
)


def _chain(coef_t=1.2, coef_m=0.9):
    g = CausalGraph("TMY", [("T", "M"), ("M", "Y")])
    mechs = {
        "T": Mechanism("logistic", 0.1),
        "M": Mechanism("logistic", -0.5, {"T": coef_t}),
        "Y": Mechanism("logistic", -0.2, {"M": coef_m}),
    }
    return ScmSpec(g, mechs, treatment="T", outcome="Y")


def test_zero_coefficient_gives_independent_outcome():
    g = CausalGraph("TY", [("T", "Y")])
    spec = ScmSpec(g, {"T": Mechanism("logistic"), "Y": Mechanism("logistic", 0.3, {"T": 0.0})}, treatment="T", outcome="Y")
    d = sample(spec, 20_000, seed=1)
    t, y = d.column("T"), d.column("Y")
    table = [[np.sum((t == a) & (y == b)) for b in (0, 1)] for a in (0, 1)]
    assert stats.chi2_contingency(table)[1] > 0.01
    assert true_ate(spec) == 0.0


def test_sample_size_must_be_positive():
    with pytest.raises(ValueError):
        sample(_chain(), 0)
    with pytest.raises(ValueError):
        sample_replication(_chain(), 0, 1)


def test_self_selection_matches_targets():
    d = sample(scenario("self_selection"), 50_000, seed=0)
    assert d.column("PvP").mean() == pytest.approx(SELF_SELECTION_TARGETS["treated_fraction"], abs=0.05)
    assert d.column("R1").mean() == pytest.approx(SELF_SELECTION_TARGETS["retention"], abs=0.05)
    assert d.treatment == "PvP" and d.outcome == "R1"


def test_null_scenario_has_zero_effect():
    assert true_ate(scenario("null_effect")) == 0.0
    assert true_ate(scenario("b"), seed=5) == 0.0


def test_mediation_chain_matches_closed_form():
    spec = _chain()
    m1, m0 = expit(-0.5 + 1.2), expit(-0.5)
    y_given_m = np.array([expit(-0.2), expit(-0.2 + 0.9)])
    exact = (m1 - m0) * (y_given_m[1] - y_given_m[0])
    mc = true_ate(spec, seed=3)
    se = true_ate_se(spec, seed=3)
    assert abs(mc - exact) < 3 * se + 1e-12


def test_truth_is_stable_across_seeds():
    spec = scenario("self_selection")
    a, b = true_ate(spec, seed=1), true_ate(spec, seed=2)
    se = true_ate_se(spec, seed=1)
    assert abs(a - b) < 3 * np.sqrt(2) * se
    with pytest.raises(ValueError):
        true_ate(spec, n_mc=100)


def test_interventions_keep_non_descendants():
    spec = scenario("self_selection")
    g = spec.graph
    d1 = sample(spec, 2000, seed=4, interventions={"PvP": 1})
    d0 = sample(spec, 2000, seed=4, interventions={"PvP": 0})
    downstream = descendants(g, "PvP")
    assert "R1" in downstream
    for v in g.nodes:
        if v != "PvP" and v not in downstream:
            np.testing.assert_array_equal(d1.column(v), d0.column(v))
    assert np.all(d1.column("PvP") == 1)


@pytest.mark.parametrize("g", random_dags(6, 5, seed=31, edge_prob=0.5, min_nodes=4))
def test_linear_samples_respect_d_separation(g):
    d = sample(random_linear_scm(g, np.random.default_rng(0)), 50_000, seed=7)
    checked = failed = 0
    for x, y in itertools.combinations(g.nodes, 2):
        rest = [v for v in g.nodes if v not in (x, y)]
        for k in range(3):
            for z in itertools.combinations(rest, k):
                if brute_d_separated(g, x, y, set(z)):
                    checked += 1
                    failed += fisher_z(d, x, y, z).p_value < 0.01
    assert failed <= max(1, 0.05 * checked)


def test_replications_are_independent_but_reproducible():
    spec = scenario("self_selection", seed=9)
    a = sample_replication(spec, 500, 1)
    assert a.rows.tobytes() == sample_replication(spec, 500, 1).rows.tobytes()
    assert a.rows.tobytes() != sample_replication(spec, 500, 2).rows.tobytes()
    assert sample(spec, 50).rows.tobytes() == sample(with_seed(spec, 9), 50).rows.tobytes()


def test_spec_round_trip():
    for name in SCENARIOS:
        spec = scenario(name, seed=3)
        again = ScmSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()
        assert sample(again, 100).rows.tobytes() == sample(spec, 100).rows.tobytes()


def test_poisson_quantile_matches_scipy():
    rng = np.random.default_rng(2)
    u = rng.random(5000)
    rate = rng.uniform(0.1, 40, 5000)
    np.testing.assert_array_equal(poisson_quantile(u, rate), stats.poisson.ppf(u, rate))


def test_spec_validation():
    g = CausalGraph("TY", [("T", "Y")])
    with pytest.raises(EffectGateError):
        ScmSpec(g, {"T": Mechanism("logistic")})
    with pytest.raises(EffectGateError):
        ScmSpec(g, {"T": Mechanism("logistic"), "Y": Mechanism("logistic")})
    with pytest.raises(EffectGateError):
        ScmSpec(g, {"T": Mechanism("poisson"), "Y": Mechanism("logistic", 0, {"T": 1})}, treatment="T")
    with pytest.raises(EffectGateError):
        Mechanism("probit")
    with pytest.raises(EffectGateError):
        scenario("nope")


def test_domain_scenarios_share_the_expected_graphs():
    assert scenario("a").graph == domain_graph()
    assert ("PvP", "R1") not in scenario("c").graph.directed
    assert ("PvP", "Total_PvE_Battle") in scenario("c").graph.directed
    pos = sample(scenario("d"), 5000, seed=0)
    web3, pvp = pos.column("Web3"), pos.column("PvP")
    assert np.mean(pvp == web3) > 0.99
