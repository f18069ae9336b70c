"""Typed tabular samples: schema, CSV loading and per-arm descriptives."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError, ParseError, SchemaError

KINDS = ("binary", "count", "continuous")
ROLES = ("treatment", "outcome", "covariate")
WINDOWS = ("pre-treatment", "outcome")

INTEGRAL_TOL = 1e-9


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    role: str = "covariate"
    window: str | None = None

    def __post_init__(self):
        if not self.name or not str(self.name).strip():
            raise SchemaError("variable name must be a non-empty identifier")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: role must be one of {ROLES}, got {self.role!r}")
        expected = "outcome" if self.role == "outcome" else "pre-treatment"
        if self.window is None:
            object.__setattr__(self, "window", expected)
        elif self.window not in WINDOWS:
            raise SchemaError(f"{self.name}: window must be one of {WINDOWS}")
        elif self.window != expected:
            raise SchemaError(
                f"{self.name}: role {self.role!r} requires window {expected!r}, got {self.window!r}"
            )

    @property
    def is_discrete(self):
        return self.kind != "continuous"

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "role": self.role, "window": self.window}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["name"], obj["kind"], obj.get("role", "covariate"), obj.get("window"))


def check_schema(specs: Sequence[VariableSpec], require_roles: bool = True) -> None:
    """Validate cross-variable schema rules.

    Names must be unique. With ``require_roles`` there must be exactly one
    binary treatment and one binary outcome; otherwise at most one of each.
    """
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate variable names: {dupes}")
    for role in ("treatment", "outcome"):
        hits = [s for s in specs if s.role == role]
        if len(hits) > 1 or (require_roles and len(hits) != 1):
            raise SchemaError(f"schema needs exactly one {role} column, found {len(hits)}")
        for s in hits:
            if s.kind != "binary":
                raise SchemaError(f"{role} column {s.name!r} must be binary, got {s.kind!r}")


def _validate_values(specs, rows):
    for j, spec in enumerate(specs):
        col = rows[:, j]
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise DomainError(
                f"column {spec.name!r} has non-finite value at row {bad[0]}", row=int(bad[0]), column=spec.name
            )
        if spec.kind == "binary":
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise DomainError(
                    f"binary column {spec.name!r} has value {col[bad[0]]!r} at row {bad[0]}",
                    row=int(bad[0]),
                    column=spec.name,
                )
        elif spec.kind == "count":
            rounded = np.round(col)
            bad = np.flatnonzero((np.abs(col - rounded) > INTEGRAL_TOL) | (rounded < 0))
            if bad.size:
                raise DomainError(
                    f"count column {spec.name!r} has value {col[bad[0]]!r} at row {bad[0]}",
                    row=int(bad[0]),
                    column=spec.name,
                )
            rows[:, j] = rounded


class Dataset:
    """An immutable n x p numeric sample with one :class:`VariableSpec` per column."""

    def __init__(self, specs: Sequence[VariableSpec], rows, dropped: int = 0, require_roles: bool = False):
        specs = tuple(specs)
        check_schema(specs, require_roles=require_roles)
        rows = np.array(rows, dtype=float, copy=True)
        if rows.ndim == 1 and len(specs) == 1:
            rows = rows[:, None]
        if rows.ndim != 2 or rows.shape[1] != len(specs):
            raise SchemaError(f"rows must be n x {len(specs)}, got shape {rows.shape}")
        if rows.shape[0] < 1:
            raise SchemaError("dataset must contain at least one row")
        _validate_values(specs, rows)
        rows.setflags(write=False)
        self.specs = specs
        self.rows = rows
        self.dropped = int(dropped)
        self._index = {s.name: j for j, s in enumerate(specs)}

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def names(self):
        return [s.name for s in self.specs]

    def spec(self, name) -> VariableSpec:
        try:
            return self.specs[self._index[name]]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def column(self, name) -> np.ndarray:
        return self.rows[:, self._index[self.spec(name).name]]

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        idx = [self._index[self.spec(nm).name] for nm in names]
        return self.rows[:, idx]

    def _role(self, role):
        for s in self.specs:
            if s.role == role:
                return s.name
        return None

    @property
    def treatment(self):
        return self._role("treatment")

    @property
    def outcome(self):
        return self._role("outcome")

    @property
    def covariates(self):
        return [s.name for s in self.specs if s.role == "covariate"]

    def take(self, index) -> "Dataset":
        """Row subset (or resample, if ``index`` repeats rows)."""
        return Dataset(self.specs, self.rows[np.asarray(index)], require_roles=False)

    def replace_column(self, name, values) -> "Dataset":
        rows = self.rows.copy()
        rows[:, self._index[self.spec(name).name]] = values
        return Dataset(self.specs, rows, require_roles=False)

    def fingerprint(self) -> str:
        """SHA-256 over column names and row bytes."""
        h = hashlib.sha256()
        h.update("\x1f".join(self.names).encode())
        h.update(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())
        return h.hexdigest()

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Dataset(n={self.n}, columns={self.names})"


def _parse_cell(text, row, column):
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan", "null"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}: column {column!r} is not numeric: {text!r}", row=row, column=column) from None


def read_csv_text(text: str, schema: Sequence[VariableSpec]) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("CSV is empty") from None
    missing = [s.name for s in schema if s.name not in header]
    if missing:
        raise SchemaError(f"CSV is missing schema columns: {missing}")
    positions = [header.index(s.name) for s in schema]
    parsed = []
    source_rows = []
    dropped = 0
    for i, record in enumerate(reader):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) < len(header):
            record = record + [""] * (len(header) - len(record))
        values = [_parse_cell(record[p], i, s.name) for p, s in zip(positions, schema)]
        if any(math.isnan(v) for v in values):
            dropped += 1
            continue
        parsed.append(values)
        source_rows.append(i)
    if not parsed:
        raise SchemaError("no complete rows remain after dropping missing values")
    rows = np.asarray(parsed, dtype=float)
    try:
        return Dataset(schema, rows, dropped=dropped, require_roles=True)
    except DomainError as exc:
        row = source_rows[exc.row]
        raise DomainError(
            f"row {row}: column {exc.column!r} violates its {next(s.kind for s in schema if s.name == exc.column)} domain",
            row=row,
            column=exc.column,
        ) from None


def load_csv(path: str | os.PathLike, schema: Sequence[VariableSpec]) -> Dataset:
    """Load a CSV file against ``schema``.

    Rows with a missing cell in any schema column are dropped; the count is
    kept in ``Dataset.dropped``. Extra columns are ignored.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        return read_csv_text(fh.read(), schema)


def format_value(value: float, kind: str) -> str:
    if kind != "continuous":
        return str(int(value))
    return repr(float(value))


def write_csv(d: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(d))


def to_csv_text(d: Dataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(d.names)
    kinds = [s.kind for s in d.specs]
    for row in d.rows:
        writer.writerow([format_value(v, k) for v, k in zip(row, kinds)])
    return out.getvalue()


@dataclass
class Descriptives:
    """Per-variable means overall and within treatment arms."""

    overall: dict = field(default_factory=dict)
    treated: dict | None = None
    control: dict | None = None
    n_treated: int = 0
    n_control: int = 0
    naive_difference: float | None = None

    @property
    def naive_defined(self):
        return self.naive_difference is not None

    def to_dict(self):
        return {
            "overall": self.overall,
            "treated": self.treated,
            "control": self.control,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "naive_difference": self.naive_difference,
        }


def describe_by_treatment(d: Dataset, treatment: str | None = None, outcome: str | None = None) -> Descriptives:
    treatment = treatment or d.treatment
    outcome = outcome or d.outcome
    if treatment is None or outcome is None:
        raise SchemaError("describe_by_treatment needs treatment and outcome columns")
    t = d.column(treatment)
    arms = {1: t == 1, 0: t == 0}

    def means(mask):
        if not mask.any():
            return None
        return {name: float(d.column(name)[mask].mean()) for name in d.names}

    desc = Descriptives(
        overall={name: float(d.column(name).mean()) for name in d.names},
        treated=means(arms[1]),
        control=means(arms[0]),
        n_treated=int(arms[1].sum()),
        n_control=int(arms[0].sum()),
    )
    if desc.treated is not None and desc.control is not None:
        desc.naive_difference = desc.treated[outcome] - desc.control[outcome]
    return desc


def domain_schema() -> list[VariableSpec]:
    """The six-variable retention schema used by the domain presets."""
    return [
        VariableSpec("R1", "binary", "outcome", "outcome"),
        VariableSpec("PvP", "binary", "treatment"),
        VariableSpec("Web3", "binary"),
        VariableSpec("Time_Play_Level1", "continuous"),
        VariableSpec("Total_PvE_Battle", "count"),
        VariableSpec("Total_Session", "count"),
    ]
