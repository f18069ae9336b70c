"""Pipeline configuration: a single JSON document, validated field by field."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .citest import ALPHA_GRID
from .dataset import KINDS, VariableSpec
from .discovery import ALGORITHMS
from .effect import ESTIMATORS
from .exceptions import ConfigError
from .graph import CONSTRAINT_LEVELS, BackgroundKnowledge
from .refute import CAUTION_RATIO, LABEL_MODES, MIN_PERMUTATIONS, SUBSET_FRACTIONS
from .synth import SCENARIO_ALIASES, SCENARIOS, scenario

CI_TESTS = ("dg_lrt", "fisher_z")
TOP_LEVEL_FIELDS = {
    "data", "treatment", "outcome", "levels", "algorithms", "alphas", "seeds", "estimators", "primary_estimator",
    "bootstrap", "refutation", "label_mode", "caution_ratio", "ci_test", "max_condset", "knowledge", "output_dir",
}  # fmt: skip


@dataclass
class PipelineConfig:
    treatment: str
    outcome: str
    data_path: str | None = None
    schema: list | None = None
    synth: dict | None = None
    levels: list = field(default_factory=lambda: list(CONSTRAINT_LEVELS))
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    alphas: list = field(default_factory=lambda: list(ALPHA_GRID))
    seeds: list = field(default_factory=lambda: [0])
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    primary_estimator: str = "dr"
    n_bootstrap: int = 0
    refute: bool = True
    n_perm: int = MIN_PERMUTATIONS
    fractions: list = field(default_factory=lambda: list(SUBSET_FRACTIONS))
    label_mode: str = "protocol"
    caution_ratio: float = CAUTION_RATIO
    ci_test: str = "dg_lrt"
    max_condset: int | None = None
    knowledge: dict | None = None
    output_dir: str | None = None
    base_dir: str = field(default=".", repr=False, compare=False)

    def resolved_data_path(self):
        if self.data_path is None:
            return None
        return self.data_path if os.path.isabs(self.data_path) else os.path.join(self.base_dir, self.data_path)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with every stochastic seed replaced by ``seed``."""
        synth = None if self.synth is None else {**self.synth, "seed": int(seed)}
        out = PipelineConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.seeds = [int(seed)]
        out.synth = synth
        return out

    def to_dict(self):
        data = {"synth": self.synth} if self.synth is not None else {
            "path": self.data_path,
            "schema": None if self.schema is None else [s.to_dict() for s in self.schema],
        }  # fmt: skip
        return {
            "data": data,
            "treatment": self.treatment,
            "outcome": self.outcome,
            "levels": list(self.levels),
            "algorithms": list(self.algorithms),
            "alphas": list(self.alphas),
            "seeds": list(self.seeds),
            "estimators": list(self.estimators),
            "primary_estimator": self.primary_estimator,
            "bootstrap": {"B": self.n_bootstrap},
            "refutation": {"enabled": self.refute, "n_perm": self.n_perm, "fractions": list(self.fractions)},
            "label_mode": self.label_mode,
            "caution_ratio": self.caution_ratio,
            "ci_test": self.ci_test,
            "max_condset": self.max_condset,
            "knowledge": None if self.knowledge is None else {k: v.to_dict() for k, v in sorted(self.knowledge.items())},
            "output_dir": self.output_dir,
        }


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, fld, msg):
        self.errors.append((fld, msg))

    def raise_if_any(self):
        if self.errors:
            text = "; ".join(f"{f}: {m}" for f, m in self.errors)
            raise ConfigError(f"invalid config: {text}", field=self.errors[0][0], errors=self.errors)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _str_list(obj, key, allowed, errs, default):
    val = obj.get(key, default)
    if not isinstance(val, list) or not val:
        errs.add(key, "must be a non-empty list")
        return default
    for i, v in enumerate(val):
        if allowed is not None and v not in allowed:
            errs.add(f"{key}[{i}]", f"must be one of {list(allowed)}, got {v!r}")
    return val


def _schema(raw, errs):
    if not isinstance(raw, list) or not raw:
        errs.add("data.schema", "must be a non-empty list of variables")
        return None
    out = []
    for i, item in enumerate(raw):
        where = f"data.schema[{i}]"
        if not isinstance(item, dict) or "name" not in item or "kind" not in item:
            errs.add(where, "needs 'name' and 'kind'")
            continue
        if item["kind"] not in KINDS:
            errs.add(f"{where}.kind", f"must be one of {list(KINDS)}")
            continue
        out.append(item)
    return out


def _data_section(obj, errs):
    data = obj.get("data")
    if not isinstance(data, dict):
        errs.add("data", "required object with either 'path' or 'synth'")
        return None, None, None
    has_path, has_synth = "path" in data, "synth" in data
    if has_path == has_synth:
        errs.add("data", "give exactly one of 'path' or 'synth'")
        return None, None, None
    if has_synth:
        s = data["synth"]
        if not isinstance(s, dict):
            errs.add("data.synth", "must be an object")
            return None, None, None
        name = s.get("scenario")
        if name not in SCENARIOS and name not in SCENARIO_ALIASES:
            errs.add("data.synth.scenario", f"must be one of {list(SCENARIOS)} or {sorted(SCENARIO_ALIASES)}")
        n = s.get("n", 5000)
        if not _is_int(n) or n < 10:
            errs.add("data.synth.n", "must be an integer >= 10")
        seed = s.get("seed", 0)
        if not _is_int(seed) or seed < 0:
            errs.add("data.synth.seed", "must be a non-negative integer")
        truth = s.get("truth_mc", 200_000)
        if not _is_int(truth) or truth < 10_000:
            errs.add("data.synth.truth_mc", "must be an integer >= 10000")
        return None, None, {"scenario": SCENARIO_ALIASES.get(name, name), "n": n, "seed": seed, "truth_mc": truth}
    path = data["path"]
    if not isinstance(path, str) or not path:
        errs.add("data.path", "must be a non-empty string")
    schema = _schema(data.get("schema"), errs)
    return path, schema, None


def _knowledge(raw, names, errs):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        errs.add("knowledge", "must map level names to {forbidden, required}")
        return None
    out = {}
    for lvl, spec in raw.items():
        where = f"knowledge.{lvl}"
        if not isinstance(spec, dict):
            errs.add(where, "must be an object")
            continue
        ok = True
        for kind in ("forbidden", "required"):
            for i, e in enumerate(spec.get(kind, [])):
                if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, str) for v in e)):
                    errs.add(f"{where}.{kind}[{i}]", "must be a [from, to] pair of names")
                    ok = False
                elif names is not None and any(v not in names for v in e):
                    errs.add(f"{where}.{kind}[{i}]", f"unknown variable in {e}")
                    ok = False
        if ok:
            bk = BackgroundKnowledge.from_dict({**spec, "level": lvl})
            for v in bk.violations():
                errs.add(where, v)
            out[lvl] = bk
    return out


def parse_config(obj, base_dir=".") -> PipelineConfig:
    """Validate a decoded JSON config; raise :class:`ConfigError` listing every bad field."""
    errs = _Collector()
    if not isinstance(obj, dict):
        errs.add("<root>", "config must be a JSON object")
        errs.raise_if_any()
    for key in sorted(set(obj) - TOP_LEVEL_FIELDS):
        errs.add(key, "unknown field")
    path, schema_raw, synth = _data_section(obj, errs)

    names = kinds = None
    if synth is not None and synth["scenario"] in SCENARIOS:
        kinds = {v.name: v.kind for v in scenario(synth["scenario"]).variable_specs()}
    elif schema_raw is not None:
        kinds = {s["name"]: s["kind"] for s in schema_raw}
    if kinds is not None:
        names = list(kinds)

    roles = {}
    for role in ("treatment", "outcome"):
        v = obj.get(role)
        if not isinstance(v, str) or not v:
            errs.add(role, "required variable name")
        elif names is not None and v not in names:
            errs.add(role, f"{v!r} is not a variable of the dataset")
        else:
            roles[role] = v
    if len(roles) == 2 and roles["treatment"] == roles["outcome"]:
        errs.add("outcome", "must differ from treatment")
    for role, v in roles.items():
        if kinds is not None and kinds[v] != "binary":
            errs.add(role, f"{v!r} must be binary, the data declares it {kinds[v]!r}")

    specs = None
    if schema_raw is not None and len(roles) == 2:
        specs = []
        for i, item in enumerate(schema_raw):
            role = next((r for r, v in roles.items() if v == item["name"]), "covariate")
            declared = item.get("role")
            if declared is not None and declared != role:
                errs.add(f"data.schema[{i}].role", f"declared {declared!r} but config makes it {role!r}")
                continue
            try:
                specs.append(VariableSpec(item["name"], item["kind"], role, item.get("window")))
            except Exception as exc:  # noqa: BLE001 - report schema problems as config errors
                errs.add(f"data.schema[{i}]", str(exc))

    knowledge = _knowledge(obj.get("knowledge"), names, errs)
    levels = _str_list(obj, "levels", None, errs, list(CONSTRAINT_LEVELS))
    for i, lvl in enumerate(levels if isinstance(levels, list) else []):
        if lvl not in CONSTRAINT_LEVELS and not (knowledge and lvl in knowledge):
            errs.add(f"levels[{i}]", f"{lvl!r} is neither a built-in level {list(CONSTRAINT_LEVELS)} nor defined in knowledge")
    algorithms = _str_list(obj, "algorithms", ALGORITHMS, errs, list(ALGORITHMS))
    estimators = _str_list(obj, "estimators", ESTIMATORS, errs, list(ESTIMATORS))

    alphas = obj.get("alphas", list(ALPHA_GRID))
    if not isinstance(alphas, list) or not alphas:
        errs.add("alphas", "must be a non-empty list")
        alphas = []
    for i, a in enumerate(alphas):
        if not _is_num(a) or not 0.0 < a < 1.0:
            errs.add(f"alphas[{i}]", "must lie in (0, 1)")
    seeds = obj.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        errs.add("seeds", "must be a non-empty list")
        seeds = []
    for i, s in enumerate(seeds):
        if not _is_int(s) or s < 0:
            errs.add(f"seeds[{i}]", "must be a non-negative integer")

    primary = obj.get("primary_estimator", "dr")
    if isinstance(estimators, list) and primary not in estimators:
        errs.add("primary_estimator", f"must be one of the requested estimators {estimators}")

    boot = obj.get("bootstrap", {})
    n_boot = boot.get("B", 0) if isinstance(boot, dict) else None
    if not _is_int(n_boot) or (n_boot != 0 and n_boot < 100):
        errs.add("bootstrap.B", "must be 0 (asymptotic CIs) or an integer >= 100")

    ref = obj.get("refutation", {})
    if not isinstance(ref, dict):
        errs.add("refutation", "must be an object")
        ref = {}
    enabled = ref.get("enabled", True)
    if not isinstance(enabled, bool):
        errs.add("refutation.enabled", "must be true or false")
    n_perm = ref.get("n_perm", MIN_PERMUTATIONS)
    if not _is_int(n_perm) or n_perm < MIN_PERMUTATIONS:
        errs.add("refutation.n_perm", f"must be an integer >= {MIN_PERMUTATIONS}")
    fractions = ref.get("fractions", list(SUBSET_FRACTIONS))
    if not isinstance(fractions, list) or not fractions:
        errs.add("refutation.fractions", "must be a non-empty list")
        fractions = []
    for i, f in enumerate(fractions):
        if not _is_num(f) or not 0.0 < f <= 1.0:
            errs.add(f"refutation.fractions[{i}]", "must lie in (0, 1]")

    mode = obj.get("label_mode", "protocol")
    if mode not in LABEL_MODES:
        errs.add("label_mode", f"must be one of {list(LABEL_MODES)}")
    ratio = obj.get("caution_ratio", CAUTION_RATIO)
    if not _is_num(ratio) or ratio <= 0:
        errs.add("caution_ratio", "must be a positive number")
    ci_test = obj.get("ci_test", "dg_lrt")
    if ci_test not in CI_TESTS:
        errs.add("ci_test", f"must be one of {list(CI_TESTS)}")
    max_condset = obj.get("max_condset")
    if max_condset is not None and (not _is_int(max_condset) or max_condset < 0):
        errs.add("max_condset", "must be null or a non-negative integer")
    out_dir = obj.get("output_dir")
    if out_dir is not None and (not isinstance(out_dir, str) or not out_dir):
        errs.add("output_dir", "must be a non-empty string")

    errs.raise_if_any()
    return PipelineConfig(
        treatment=roles["treatment"],
        outcome=roles["outcome"],
        data_path=path,
        schema=specs,
        synth=synth,
        levels=list(levels),
        algorithms=list(algorithms),
        alphas=[float(a) for a in alphas],
        seeds=[int(s) for s in seeds],
        estimators=list(estimators),
        primary_estimator=primary,
        n_bootstrap=n_boot,
        refute=enabled,
        n_perm=n_perm,
        fractions=[float(f) for f in fractions],
        label_mode=mode,
        caution_ratio=float(ratio),
        ci_test=ci_test,
        max_condset=max_condset,
        knowledge=knowledge,
        output_dir=out_dir,
        base_dir=base_dir,
    )


def load_config(path) -> PipelineConfig:
    """Read and validate a config file. Unreadable or malformed JSON is a config error."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="<file>") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="<file>") from None
    return parse_config(obj, os.path.dirname(os.path.abspath(path)))
