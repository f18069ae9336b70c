import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from effectgate.citest import DSeparationOracle
from effectgate.dataset import Dataset, VariableSpec
from effectgate.effect import EffectEstimate, point_estimate
from effectgate.graph import BackgroundKnowledge
from effectgate.identify import AdmissibilityVerdict
from effectgate.refute import (
    MIN_PERMUTATIONS,
    GridSettings,
    PlaceboResult,
    RunRecord,
    SubsetResult,
    alpha_stability,
    decision,
    label,
    label_counts,
    ladder_summary,
    placebo_test,
    run_grid,
    subset_test,
)
from effectgate.synth import domain_graph, sample, scenario

TY = [VariableSpec("T", "binary", "treatment"), VariableSpec("Y", "binary", "outcome")]


def _diff_in_means(d):
    t, y = d.column(d.treatment), d.column(d.outcome)
    return float(y[t == 1].mean() - y[t == 0].mean())


def _record(ate, level="C0", seed=0, alpha=0.05, ci=None, placebo_p=0.5, subsets=None, lab="reject"):
    if ate is None:
        v = AdmissibilityVerdict(False, failure_reason="unresolved_adjacency")
        return RunRecord("pc", alpha, seed, level, None, v)
    lo, hi = ci if ci is not None else (ate - 0.01, ate + 0.01)
    est = EffectEstimate("dr", point=ate, ci_low=lo, ci_high=hi)
    sub = SubsetResult(ate, subsets if subsets is not None else {0.5: ate})
    return RunRecord(
        "pc", alpha, seed, level, None, AdmissibilityVerdict(True, ("W",)), (est,), PlaceboResult(0.0, placebo_p, 200), sub, label=lab
    )


@pytest.fixture(scope="module")
def scenario_a():
    return sample(scenario("self_selection"), 5000, seed=3)


def test_placebo_on_confounded_data(scenario_a):
    f = lambda b: point_estimate(b, "reg", ["Web3"])  # noqa: E731
    res = placebo_test(scenario_a, f, seed=1)
    assert abs(res.tau) < 0.03
    assert 1 / (1 + MIN_PERMUTATIONS) <= res.p <= 1
    assert res.p > 0.05
    assert res.n_failed == 0 and len(res.null) == MIN_PERMUTATIONS
    # the observed effect sits far outside the permutation null
    assert abs(f(scenario_a)) > np.abs(res.null).max()
    again = placebo_test(scenario_a, f, seed=1)
    assert (again.tau, again.p) == (res.tau, res.p)


def test_placebo_constant_outcome_is_exactly_zero():
    rows = [[1, 1], [0, 1]] * 20
    res = placebo_test(Dataset(TY, rows), _diff_in_means)
    assert res.tau == 0.0
    assert res.p == 1.0


def test_placebo_needs_enough_permutations(binary_ty):
    with pytest.raises(ValueError):
        placebo_test(binary_ty, _diff_in_means, n_perm=199)


def test_placebo_p_is_super_uniform_under_the_null():
    rng = np.random.default_rng(0)
    ps = []
    for i in range(150):
        t = (rng.random(200) < 0.5).astype(float)
        y = (rng.random(200) < 0.4).astype(float)
        ps.append(placebo_test(Dataset(TY, np.column_stack([t, y])), _diff_in_means, seed=i).p)
    assert stats.kstest(ps, "uniform", alternative="greater").pvalue > 0.01
    assert min(ps) >= 1 / 201


def test_full_fraction_reproduces_the_estimate(scenario_a):
    f = lambda b: point_estimate(b, "dr", ["Web3"])  # noqa: E731
    res = subset_test(scenario_a, f, fractions=(1.0, 0.5))
    assert res.estimates[1.0] == res.full == f(scenario_a)
    assert res.sign_consistent
    assert res.width == pytest.approx(abs(res.estimates[0.5] - res.full))
    with pytest.raises(ValueError):
        subset_test(scenario_a, f, fractions=(0.0,))


def test_subset_losing_an_arm_is_undefined():
    rows = [[1, 1]] + [[0, 0], [0, 1]] * 50
    res = subset_test(Dataset(TY, rows), _diff_in_means, fractions=(0.01, 1.0))
    assert res.estimates[0.01] is None
    assert res.estimates[1.0] == res.full
    assert res.defined == [res.full]


def test_subsets_are_seeded(scenario_a):
    f = lambda b: point_estimate(b, "reg", ["Web3"])  # noqa: E731
    assert subset_test(scenario_a, f, seed=4).estimates == subset_test(scenario_a, f, seed=4).estimates
    assert subset_test(scenario_a, f, seed=4).estimates != subset_test(scenario_a, f, seed=5).estimates


def test_protocol_labels():
    assert label(_record(0.15)) == "trust"
    # placebo flags a spurious association
    assert label(_record(0.15, placebo_p=0.01)) == "reject"
    # CI straddles zero, subsets agree in sign and scatter widely
    wide = _record(0.15, ci=(-0.05, 0.35), subsets={0.1: 0.02, 0.5: 0.2})
    assert label(wide) == "caution"
    # CI straddles zero with a tight subset range
    assert label(_record(0.15, ci=(-0.05, 0.35), subsets={0.5: 0.16})) == "reject"
    # subsets flip sign
    assert label(_record(0.15, subsets={0.1: -0.02})) == "reject"
    assert label(_record(None)) == "reject"
    with pytest.raises(ValueError):
        label(_record(0.1), mode="vote")


@given(
    st.floats(-1, 1).filter(lambda x: abs(x) > 1e-6),
    st.floats(0.001, 0.5),
    st.floats(0.0, 1.0),
    st.dictionaries(st.sampled_from([0.1, 0.5, 0.8, 0.9]), st.floats(-1, 1), max_size=4),
)
def test_ci_rule_never_cautions(ate, half, p, subsets):
    rec = _record(ate, ci=(ate - half, ate + half), placebo_p=p, subsets=subsets)
    assert label(rec, "ci_rule") in ("trust", "reject")
    assert (label(rec, "ci_rule") == "trust") == (abs(ate) > half)
    if label(rec) == "trust":
        assert label(rec, "ci_rule") == "trust"


def test_ladder_summary_example():
    recs = [_record(0.14, seed=0), _record(0.15, seed=1), _record(None, seed=2)]
    s = ladder_summary(recs)["C0"]
    assert s.n_runs == 3
    assert s.identifiable_rate == pytest.approx(2 / 3)
    assert s.mean_ate == pytest.approx(0.145, abs=1e-12)
    assert s.sd_ate == pytest.approx(0.005, abs=1e-12)
    assert ladder_summary(recs[::-1]).to_dict() == ladder_summary(recs).to_dict()


def test_ladder_edge_cases():
    none = ladder_summary([_record(None, seed=i) for i in range(3)])["C0"]
    assert none.identifiable_rate == 0 and none.mean_ate is None and none.sd_ate is None
    one = ladder_summary([_record(0.2)])["C0"]
    assert one.sd_ate == 0.0 and one.mean_ate == 0.2
    with pytest.raises(ValueError):
        ladder_summary([])
    mixed = ladder_summary([_record(0.1, level="C3"), _record(0.1, level="C0")])
    assert list(mixed.levels) == ["C0", "C3"]


def test_decision_rules():
    trusted = [_record(0.15, seed=0, lab="trust"), _record(0.16, seed=1, lab="trust")]
    assert decision(trusted)["decision"] == "trust"
    assert decision([_record(0.15, lab="trust"), _record(-0.1, seed=1)])["decision"] == "reject"
    assert decision([_record(0.15, lab="trust"), _record(0.5, seed=1)])["decision"] == "caution"
    assert decision([_record(0.15, lab="caution")])["decision"] == "caution"
    assert decision([_record(None), _record(0.15)])["decision"] == "reject"
    assert decision([])["decision"] == "reject"


def test_alpha_stability_groups_by_level_and_algorithm():
    recs = [_record(0.1, alpha=0.01), _record(0.2, alpha=0.05), _record(0.3, level="C1")]
    out = alpha_stability(recs)
    assert out["C0"]["pc"]["n_runs"] == 2
    assert out["C0"]["pc"]["mean_ate"] == pytest.approx(0.15)
    assert out["C1"]["pc"]["identifiable_rate"] == 1.0


def test_record_invariants():
    v = AdmissibilityVerdict(False, failure_reason="unresolved_adjacency")
    with pytest.raises(ValueError):
        RunRecord("pc", 0.05, 0, "C0", None, v, label="trust")
    with pytest.raises(ValueError):
        RunRecord("pc", 0.05, 0, "C0", None, AdmissibilityVerdict(True, ()), label="maybe")
    assert label_counts([_record(0.1, lab="trust"), _record(None)]) == {"trust": 1, "caution": 0, "reject": 1}


def test_single_cell_grid(scenario_a):
    recs = run_grid(scenario_a, ["pc"], [0.05], [0], "C3")
    assert len(recs) == 1
    assert recs[0].to_dict()["level"] == "C3"


def test_oracle_grid_is_stable_at_full_knowledge(scenario_a):
    recs = run_grid(scenario_a, ["pc"], [0.01, 0.05, 0.1], [0, 1], "C3", tester=DSeparationOracle(domain_graph()))
    assert len(recs) == 6
    assert all(r.verdict.identifiable and r.verdict.adjustment_set == ("Web3",) for r in recs)
    s = ladder_summary(recs)["C3"]
    assert s.identifiable_rate == 1.0 and s.sd_ate < 0.01


def test_knowledge_only_scenario_needs_the_platform_ban():
    d = sample(scenario("knowledge_only"), 5000, seed=0)
    s = GridSettings("PvP", "R1", refute=False)
    recs = run_grid(d, ["pc"], [0.01, 0.05], [0], ["C0", "C1"], s)
    ladder = ladder_summary(recs)
    assert ladder["C0"].identifiable_rate == 0.0
    assert all(r.verdict.failure_reason == "unresolved_adjacency" for r in recs if r.level == "C0")
    assert ladder["C1"].identifiable_rate == 1.0


def test_failures_are_recorded_not_raised(scenario_a):
    k = BackgroundKnowledge(frozenset(), frozenset({("R1", "PvP"), ("PvP", "R1")}))
    recs = run_grid(scenario_a, ["pc"], [0.05], [0], "custom", knowledge={"custom": k})
    assert len(recs) == 1
    assert recs[0].error and recs[0].label == "reject"
    assert recs[0].verdict.failure_reason == "not_dag"


def test_grid_is_order_independent(scenario_a):
    s = GridSettings("PvP", "R1", n_perm=200)
    a = run_grid(scenario_a, ["pc", "score_greedy"], [0.05, 0.01], [1, 0], "C2", s)
    b = run_grid(scenario_a, ["score_greedy", "pc"], [0.01, 0.05], [0, 1], "C2", s)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert [r.key for r in a] == sorted(r.key for r in a)
