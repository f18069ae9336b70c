"""effectgate: validate a treatment-effect query against discovered causal graphs.

Discovered graphs are treated as structural hypotheses. Each one has to pass
an admissibility gate (a valid backdoor adjustment set plus propensity
overlap) before an effect is estimated, refuted and labelled
trust / caution / reject.
"""

__version__ = "0.1.0"

from .dataset import Dataset, VariableSpec, describe_by_treatment, domain_schema, load_csv, write_csv  # noqa: E402
from .discovery import DiscoveryConfig, GreedyBICDiscovery, PCDiscovery, discover, pc, score_greedy  # noqa: E402
from .effect import (  # noqa: E402
    EffectEstimate,
    EffectEstimator,
    bootstrap_ci,
    estimate,
    estimate_dr,
    estimate_ipw,
    estimate_reg,
    estimate_rr,
    evalue,
)
from .graph import BackgroundKnowledge, CausalGraph, constraint_level, d_separated, graph_metrics  # noqa: E402
from .identify import AdmissibilityVerdict, backdoor_valid, gate, minimal_adjustment  # noqa: E402
from .overlap import PropensityModel, ess, overlap_report, smd, trim_common_support  # noqa: E402
from .refute import RunRecord, label, ladder_summary, placebo_test, run_grid, subset_test  # noqa: E402
from .synth import ScmSpec, sample, scenario, true_ate  # noqa: E402

__all__ = [
    "AdmissibilityVerdict",
    "BackgroundKnowledge",
    "CausalGraph",
    "Dataset",
    "DiscoveryConfig",
    "EffectEstimate",
    "EffectEstimator",
    "GreedyBICDiscovery",
    "PCDiscovery",
    "PropensityModel",
    "RunRecord",
    "ScmSpec",
    "VariableSpec",
    "backdoor_valid",
    "bootstrap_ci",
    "constraint_level",
    "d_separated",
    "describe_by_treatment",
    "discover",
    "domain_schema",
    "ess",
    "estimate",
    "estimate_dr",
    "estimate_ipw",
    "estimate_reg",
    "estimate_rr",
    "evalue",
    "gate",
    "graph_metrics",
    "label",
    "ladder_summary",
    "load_csv",
    "minimal_adjustment",
    "overlap_report",
    "pc",
    "placebo_test",
    "run_grid",
    "sample",
    "scenario",
    "score_greedy",
    "smd",
    "subset_test",
    "trim_common_support",
    "true_ate",
    "write_csv",
]
