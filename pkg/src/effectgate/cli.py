"""Command-line entry point: ``effectgate {run,synth,metrics,validate-config}``.

Exit codes: 0 success (including runs that all end in reject), 2 invalid
config or usage, 3 data errors, 4 output directory not writable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

from . import __version__
from .config import PipelineConfig, load_config
from .dataset import Dataset, load_csv, write_csv
from .exceptions import ConfigError, EffectGateError
from .graph import from_edgelist, graph_metrics
from .refute import GridSettings, run_grid
from .report import build_report, write_outputs
from .synth import SCENARIO_ALIASES, SCENARIOS, sample, scenario, true_ate, true_ate_se

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_OUTPUT = 4

log = logging.getLogger("effectgate")


class OutputError(EffectGateError):
    """The output directory cannot be created or written."""


def _ensure_writable(path):
    try:
        os.makedirs(path, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path, prefix=".write-test-"):
            pass
    except OSError as exc:
        raise OutputError(f"output directory {path!r} is not writable: {exc.strerror or exc}") from None


def load_data(cfg: PipelineConfig):
    """Return ``(dataset, truth, info)`` for the configured data source."""
    if cfg.synth is not None:
        s = cfg.synth
        spec = scenario(s["scenario"], s["seed"])
        d = sample(spec, s["n"], seed=s["seed"])
        truth = None
        if cfg.treatment == spec.treatment and cfg.outcome == spec.outcome:
            mc_seed = [s["seed"], 1]
            truth = {
                "scenario": s["scenario"],
                "n_mc": s["truth_mc"],
                "true_ate": true_ate(spec, n_mc=s["truth_mc"], seed=mc_seed),
                "true_ate_se": true_ate_se(spec, n_mc=s["truth_mc"], seed=mc_seed),
            }
        return d, truth, {"source": f"synth:{s['scenario']}"}
    d = load_csv(cfg.resolved_data_path(), cfg.schema)
    if d.dropped:
        log.info("dropped %d rows with missing values", d.dropped)
    return d, None, {"source": os.path.basename(cfg.data_path)}


def execute(cfg: PipelineConfig, d: Dataset, jobs: int = 1):
    settings = GridSettings(
        treatment=cfg.treatment,
        outcome=cfg.outcome,
        estimators=tuple(cfg.estimators),
        primary=cfg.primary_estimator,
        n_bootstrap=cfg.n_bootstrap,
        n_perm=cfg.n_perm,
        fractions=tuple(cfg.fractions),
        label_mode=cfg.label_mode,
        caution_ratio=cfg.caution_ratio,
        ci_test=cfg.ci_test,
        max_condset=cfg.max_condset,
        refute=cfg.refute,
    )
    return run_grid(d, cfg.algorithms, cfg.alphas, cfg.seeds, cfg.levels, settings, cfg.knowledge, jobs)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed_override", None) is not None:
        cfg = cfg.with_seed(args.seed_override)
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    out = args.out or (cfg.output_dir and os.path.join(cfg.base_dir, cfg.output_dir))
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir", field="output_dir")
    _ensure_writable(out)
    d, truth, info = load_data(cfg)
    log.info("dataset: n=%d, sha256=%s", d.n, d.fingerprint()[:12])
    n_cells = len(cfg.levels) * len(cfg.algorithms) * len(cfg.alphas) * len(cfg.seeds)
    log.info("running %d grid cells with %d job(s)", n_cells, args.jobs)
    records = execute(cfg, d, args.jobs)
    doc = build_report(cfg.to_dict(), d, records, truth, info)
    try:
        write_outputs(out, doc, records)
    except OSError as exc:
        raise OutputError(f"cannot write report to {out!r}: {exc}") from None
    counts = doc["label_counts"]
    log.info(
        "done: %d runs (trust %d, caution %d, reject %d); decision %s",
        len(records), counts["trust"], counts["caution"], counts["reject"], doc["decision"]["decision"],
    )  # fmt: skip
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.config:
        cfg = _config(args)
        if cfg.synth is None:
            raise ConfigError("config has no data.synth section", field="data.synth")
        name, n, seed = cfg.synth["scenario"], cfg.synth["n"], cfg.synth["seed"]
    else:
        name = SCENARIO_ALIASES.get(args.scenario, args.scenario)
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {args.scenario!r}", field="scenario")
        if args.n < 1:
            raise ConfigError("n must be >= 1", field="n")
        n = args.n
        seed = args.seed_override if args.seed_override is not None else 0
    if not args.out:
        raise ConfigError("synth needs --out", field="out")
    _ensure_writable(args.out)
    spec = scenario(name, seed)
    d = sample(spec, n, seed=seed)
    truth = true_ate(spec, n_mc=200_000, seed=[seed, 1])
    try:
        write_csv(d, os.path.join(args.out, "data.csv"))
        meta = {"scm": spec.to_dict(), "n": n, "seed": seed, "true_ate": truth, "sha256": d.fingerprint()}
        with open(os.path.join(args.out, "scm.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        run_cfg = {
            "data": {"path": "data.csv", "schema": [s.to_dict() for s in spec.variable_specs()]},
            "treatment": spec.treatment,
            "outcome": spec.outcome,
            "output_dir": "report",
        }
        with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(run_cfg, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write to {args.out!r}: {exc}") from None
    log.info("wrote %d rows of scenario %s (true ATE %.4f) to %s", n, name, truth, args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    graphs = []
    for path in (args.graph, args.baseline):
        try:
            with open(path, encoding="utf-8") as fh:
                graphs.append(from_edgelist(fh.read()))
        except OSError as exc:
            raise EffectGateError(f"cannot read {path}: {exc.strerror}") from None
    m = graph_metrics(*graphs).to_dict()
    text = json.dumps(m, sort_keys=True, indent=2) + "\n"
    if args.out:
        _ensure_writable(args.out)
        with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args)
    n_cells = len(cfg.levels) * len(cfg.algorithms) * len(cfg.alphas) * len(cfg.seeds)
    log.info("config ok: %d grid cells", n_cells)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="effectgate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full validation pipeline")
    run.add_argument("--config", required=True, help="pipeline config (JSON)")
    run.add_argument("--jobs", type=int, default=1, help="parallel grid workers (default 1)")
    run.add_argument("--out", help="output directory (overrides output_dir in the config)")
    run.add_argument("--seed-override", type=int, help="replace every seed in the config")
    run.set_defaults(func=cmd_run)

    syn = sub.add_parser("synth", help="sample a preset scenario to CSV")
    syn.add_argument("--config", help="take scenario, n and seed from a config's data.synth section")
    syn.add_argument("--scenario", default="self_selection", help=f"one of {', '.join(SCENARIOS)}")
    syn.add_argument("--n", type=int, default=5000)
    syn.add_argument("--out", help="output directory")
    syn.add_argument("--seed-override", type=int, help="sampling seed")
    syn.set_defaults(func=cmd_synth)

    met = sub.add_parser("metrics", help="graph deviation metrics between two edge-list files")
    met.add_argument("graph")
    met.add_argument("baseline")
    met.add_argument("--out", help="write metrics.json here instead of stdout")
    met.set_defaults(func=cmd_metrics)

    val = sub.add_parser("validate-config", help="check a config and report every invalid field")
    val.add_argument("--config", required=True)
    val.add_argument("--seed-override", type=int)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="effectgate: %(levelname)s: %(message)s", force=True)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) == 0:
        log.error("--jobs must be non-zero (use -1 for all cores)")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        for fld, msg in exc.errors or [(exc.field, str(exc))]:
            log.error("config field %s: %s", fld, msg)
        return EXIT_CONFIG
    except OutputError as exc:
        log.error("%s", exc)
        return EXIT_OUTPUT
    except (EffectGateError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
