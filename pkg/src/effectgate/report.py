"""Deterministic report emission: report.json, runs.csv and one edge list per discovered graph."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from importlib import resources

import numpy as np

from . import __version__
from .dataset import Dataset, describe_by_treatment
from .graph import to_edgelist
from .refute import alpha_stability, decision, label_counts, ladder_summary

SCHEMA_VERSION = "1.0.0"
RUNS_HEADER = (
    "level", "algorithm", "alpha", "seed", "identifiable", "adjustment_set",
    "ate_reg", "ate_ipw", "ate_dr", "ci_low", "ci_high", "placebo_p", "label",
)  # fmt: skip
ESTIMATOR_COLUMNS = ("reg", "ipw", "dr")


def report_schema() -> dict:
    """The JSON Schema document that every report.json validates against."""
    text = resources.files("effectgate").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _plain(obj):
    """Convert to JSON-safe builtins; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def build_report(config: dict, d: Dataset, records, truth: dict | None = None, dataset_info: dict | None = None):
    """Assemble the report document. Contains no timestamps or host details so reruns are byte-identical."""
    records = sorted(records, key=lambda r: r.key)
    ds = dict(dataset_info or {})
    ds.update(sha256=d.fingerprint(), n=d.n, dropped=d.dropped, variables=[s.to_dict() for s in d.specs])
    treatment, outcome = config.get("treatment"), config.get("outcome")
    if treatment and outcome:
        ds["descriptives"] = describe_by_treatment(d, treatment, outcome).to_dict()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "generator": {"name": "effectgate", "version": __version__},
        "config": config,
        "dataset": ds,
        "truth": truth,
        "runs": [r.to_dict() for r in records],
        "label_counts": label_counts(records),
        "ladder": ladder_summary(records).to_dict() if records else {},
        "alpha_stability": alpha_stability(records),
        "decision": decision(records, config.get("caution_ratio", 0.5)),
    }
    return _plain(doc)


def dumps_report(doc: dict) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


def _fmt(x):
    return "" if x is None else repr(float(x))


def runs_csv_text(records) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RUNS_HEADER)
    for r in sorted(records, key=lambda r: r.key):
        main = r.main_estimate
        adj = r.verdict.adjustment_set
        w.writerow(
            [
                r.level,
                r.algorithm,
                repr(float(r.alpha)),
                r.seed,
                "true" if r.verdict.identifiable else "false",
                "" if adj is None else ";".join(adj),
                *(_fmt(e.point if e is not None and e.defined else None) for e in map(r.estimate_for, ESTIMATOR_COLUMNS)),
                _fmt(main.ci_low if main is not None and main.defined else None),
                _fmt(main.ci_high if main is not None and main.defined else None),
                _fmt(None if r.placebo is None else r.placebo.p),
                r.label,
            ]
        )
    return out.getvalue()


def edgelist_filename(rec) -> str:
    return f"{rec.level}_{rec.algorithm}_alpha{rec.alpha:g}_seed{rec.seed}.edgelist"


def write_outputs(out_dir, doc: dict, records) -> list[str]:
    """Write report.json, runs.csv and graphs/*.edgelist under ``out_dir``; return the paths written.

    Stale edge lists from an earlier run in the same directory are removed
    so the directory mirrors exactly one report.
    """
    graphs = os.path.join(out_dir, "graphs")
    digest = doc.get("dataset", {}).get("sha256")
    os.makedirs(graphs, exist_ok=True)
    keep = set()
    written = []
    for r in sorted(records, key=lambda r: r.key):
        if r.graph is None:
            continue
        name = edgelist_filename(r)
        keep.add(name)
        header = [f"level={r.level}", f"algorithm={r.algorithm}", f"alpha={r.alpha:g}", f"seed={r.seed}"]
        if digest:
            header.append(f"dataset_sha256={digest}")
        path = os.path.join(graphs, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(to_edgelist(r.graph, header))
        written.append(path)
    for name in os.listdir(graphs):
        if name.endswith(".edgelist") and name not in keep:
            os.remove(os.path.join(graphs, name))
    for name, text in (("report.json", dumps_report(doc)), ("runs.csv", runs_csv_text(records))):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written
