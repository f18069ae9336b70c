"""End-to-end acceptance criteria, each run at its stated tolerance and time budget.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import itertools
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, random_dags
from oracles import brute_backdoor, brute_minimal, cpdag_oracle

from effectgate.citest import DSeparationOracle
from effectgate.cli import main
from effectgate.discovery import DiscoveryConfig, pc
from effectgate.effect import bootstrap_ci, estimate, estimate_dr, evalue, point_estimate
from effectgate.graph import constraint_level
from effectgate.identify import backdoor_valid, gate, minimal_adjustment
from effectgate.overlap import ess, fit_propensity, overlap_report, trim_by_scores
from effectgate.refute import GridSettings, ladder_summary, placebo_test, run_grid, subset_test
from effectgate.synth import sample, sample_replication, scenario, true_ate

MC_SEED = [0, 1]


@contextmanager
def criterion(number, title):
    facts = {}
    start = time.perf_counter()
    try:
        yield facts
    except BaseException:
        _record(number, "FAIL", title, facts, time.perf_counter() - start)
        raise
    _record(number, "PASS", title, facts, time.perf_counter() - start)


def _record(number, status, title, facts, elapsed):
    detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in facts.items())
    ACCEPTANCE_LINES.append((number, f"{status}  {number:>2}. {title} [{detail}; {elapsed:.1f}s]"))


@pytest.fixture(scope="module")
def scenario_a():
    spec = scenario("self_selection")
    return sample(spec, 20_000, seed=0), true_ate(spec, seed=MC_SEED)


def test_criterion_01_evalue_closed_form():
    with criterion(1, "E-value closed form") as f:
        res = evalue(1.19, ci_bound=1.12)
        f["evalue"], f["evalue_ci"] = res.evalue_point, res.evalue_ci
        assert 1.64 <= res.evalue_point <= 1.68
        assert 1.46 <= res.evalue_ci <= 1.50
        reps = 1000
        start = time.perf_counter()
        for _ in range(reps):
            evalue(1.19, ci_bound=1.12)
        per_call = (time.perf_counter() - start) / reps
        f["ms_per_call"] = per_call * 1e3
        assert per_call < 1e-3


def test_criterion_02_backdoor_oracle_equivalence():
    with criterion(2, "backdoor gate vs brute-force oracle, 200 DAGs <= 5 nodes") as f:
        start = time.perf_counter()
        disagreements = checks = 0
        for g in random_dags(200, 5, seed=2):
            for t, y in itertools.permutations(g.nodes, 2):
                rest = [v for v in g.nodes if v not in (t, y)]
                for k in range(len(rest) + 1):
                    for w in itertools.combinations(rest, k):
                        checks += 1
                        disagreements += backdoor_valid(g, t, y, w) != brute_backdoor(g, t, y, w)
                expected = brute_minimal(g, t, y)
                v = gate(g, t, y)
                checks += 1
                disagreements += minimal_adjustment(g, t, y) != expected
                disagreements += v.identifiable != (expected is not None)
                disagreements += v.identifiable and v.adjustment_set != expected
        elapsed = time.perf_counter() - start
        f["checks"], f["disagreements"], f["seconds"] = checks, disagreements, elapsed
        assert disagreements == 0
        assert elapsed < 30


def test_criterion_03_pc_oracle_recovery():
    with criterion(3, "PC with d-separation oracle recovers the CPDAG, 200 DAGs <= 6 nodes") as f:
        start = time.perf_counter()
        misses = 0
        for g in random_dags(200, 6, seed=3):
            misses += pc(None, DiscoveryConfig("pc"), DSeparationOracle(g)) != cpdag_oracle(g)
        elapsed = time.perf_counter() - start
        f["misses"], f["seconds"] = misses, elapsed
        assert misses == 0
        assert elapsed < 60


def test_criterion_04_estimators_recover_truth(scenario_a):
    with criterion(4, "reg/ipw/dr and double-robustness variants within 0.02 on scenario (a)") as f:
        start = time.perf_counter()
        d, truth = scenario_a
        f["true_ate"] = truth
        errors = {name: estimate(d, name, ["Web3"]).point - truth for name in ("reg", "ipw", "dr")}
        errors["dr_bad_outcome"] = estimate_dr(d, w=(), m=fit_propensity(d, ["Web3"])).point - truth
        errors["dr_bad_propensity"] = estimate_dr(d, w=["Web3"], m=fit_propensity(d, [])).point - truth
        for name, err in errors.items():
            f[f"err_{name}"] = err
        elapsed = time.perf_counter() - start
        assert all(abs(e) < 0.02 for e in errors.values())
        assert elapsed < 120


def test_criterion_05_indirect_pathway_identification():
    with criterion(5, "mediation-only scenario (c) identifiable without a direct edge") as f:
        spec = scenario("mediation_only")
        truth = true_ate(spec, seed=MC_SEED)
        d = sample(spec, 20_000, seed=0)
        assert ("PvP", "R1") not in spec.graph.directed
        true_verdict = gate(spec.graph, "PvP", "R1")
        k = constraint_level("C3", d.names)
        g = pc(d, DiscoveryConfig("pc", 0.01, knowledge=k))
        v = gate(g, "PvP", "R1")
        f["identifiable"] = v.identifiable
        f["adjustment_set"] = "{" + ",".join(v.adjustment_set or ()) + "}"
        assert true_verdict.identifiable and v.identifiable
        assert ("PvP", "R1") not in g.directed and ("PvP", "R1") not in g.undirected
        tau = estimate(d, "dr", v.adjustment_set).point
        f["tau_dr"], f["true_ate"] = tau, truth
        assert abs(tau - truth) < 0.02


def test_criterion_06_admissibility_bottleneck():
    with criterion(6, "knowledge-only orientation: C0 rate 0, C2/C3 identifiable and stable") as f:
        d = sample(scenario("knowledge_only"), 5000, seed=0)
        s = GridSettings("PvP", "R1", refute=False)
        recs = run_grid(d, ["pc", "score_greedy"], [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2], [0], ["C0", "C2", "C3"], s)
        ladder = ladder_summary(recs)
        for lvl in ("C0", "C2", "C3"):
            f[f"rate_{lvl}"] = ladder[lvl].identifiable_rate
        f["sd_C2"], f["sd_C3"] = ladder["C2"].sd_ate, ladder["C3"].sd_ate
        assert ladder["C0"].identifiable_rate == 0
        assert ladder["C0"].mean_ate is None
        for lvl in ("C2", "C3"):
            assert ladder[lvl].identifiable_rate > 0
            assert ladder[lvl].sd_ate < 0.02


def test_criterion_07_refutation_behaviour(scenario_a):
    with criterion(7, "placebo near zero and subsets stable on scenario (a)") as f:
        start = time.perf_counter()
        d, _ = scenario_a
        closure = lambda b: point_estimate(b, "dr", ["Web3"])  # noqa: E731
        placebo = placebo_test(d, closure, seed=0)
        f["placebo_tau"], f["placebo_p"] = placebo.tau, placebo.p
        subsets = subset_test(d, closure, fractions=(0.5, 0.8, 0.9), seed=0)
        f["full"], f["max_dev"] = subsets.full, subsets.max_deviation()
        elapsed = time.perf_counter() - start
        assert abs(placebo.tau) < 0.02 and placebo.p > 0.1
        assert all(v is not None for v in subsets.estimates.values())
        assert subsets.max_deviation() <= 0.04
        assert subsets.sign_consistent
        assert elapsed < 120


def test_criterion_08_overlap_formulas(scenario_a):
    with criterion(8, "ESS formulas, hand-fixture trim and post-IPW balance") as f:
        assert ess(np.ones(250)) == 250.0
        assert abs(ess([1, 1, 2]) - 8 / 3) <= 1e-12
        from effectgate.dataset import Dataset, VariableSpec

        fixture = Dataset(
            [VariableSpec("T", "binary", "treatment"), VariableSpec("X", "continuous")],
            [[1, 0.0], [1, 1.0], [0, 2.0], [0, 3.0]],
        )
        _, report, keep = trim_by_scores(fixture, np.array([0.4, 0.6, 0.2, 0.5]))
        f["support"] = str(report.common_support)
        assert report.common_support == (0.4, 0.5)
        assert keep.tolist() == [True, False, False, True]
        d, _ = scenario_a
        _, ov = overlap_report(d, fit_propensity(d, ["Web3"]))
        f["max_smd_after"] = ov.max_smd_after
        assert ov.max_smd_after < 0.1


def test_criterion_09_determinism(tmp_path):
    with criterion(9, "identical run invocations give byte-identical report.json") as f:
        cfg = {
            "data": {"synth": {"scenario": "a", "n": 3000, "seed": 0}},
            "treatment": "PvP",
            "outcome": "R1",
            "alphas": [0.01, 0.05],
            "bootstrap": {"B": 100},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        outs = [tmp_path / "first", tmp_path / "second"]
        for out in outs:
            assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        blobs = [(out / "report.json").read_bytes() for out in outs]
        f["bytes"] = len(blobs[0])
        assert blobs[0] == blobs[1]


@pytest.mark.slow
def test_criterion_10_bootstrap_calibration():
    with criterion(10, "bootstrap 95% CI coverage over 200 replications of scenario (a), n=5000") as f:
        start = time.perf_counter()
        spec = scenario("self_selection")
        truth = true_ate(spec, seed=MC_SEED)
        closure = lambda b: point_estimate(b, "dr", ["Web3"])  # noqa: E731
        covered = 0
        reps = 200
        for r in range(reps):
            d = sample_replication(spec, 5000, r)
            ci = bootstrap_ci(closure, d, B=200, seed=r)
            covered += ci.low <= truth <= ci.high
        coverage = covered / reps
        elapsed = time.perf_counter() - start
        f["coverage"], f["seconds"] = coverage, elapsed
        assert coverage >= 0.90
        assert elapsed < 600
