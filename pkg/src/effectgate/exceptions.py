"""Exception and warning classes used across effectgate."""


class EffectGateError(Exception):
    """Base class for all effectgate errors."""


class SchemaError(EffectGateError):
    """The data or schema does not match the declared variable specs."""


class ParseError(EffectGateError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(EffectGateError, ValueError):
    """A value lies outside the domain allowed for its variable or argument."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NodeLookupError(EffectGateError, KeyError):
    """A node name is not present in the graph."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NotDAGError(EffectGateError):
    """A DAG-only query received a graph with undirected edges or cycles."""


class DegenerateDataError(EffectGateError):
    """Data too degenerate (constant column, singular covariance) to test."""


class InsufficientSampleError(EffectGateError):
    """Not enough rows for the requested computation."""


class PositivityError(EffectGateError):
    """Propensity scores too close to 0 or 1 for weighting."""


class ConfigError(EffectGateError):
    """Invalid pipeline configuration; ``field`` names the first offending entry, ``errors`` all of them."""

    def __init__(self, message, field=None, errors=None):
        super().__init__(message)
        self.field = field
        self.errors = list(errors) if errors else ([(field, message)] if field else [])


class SeparationWarning(UserWarning):
    """Logistic fit hit (quasi-)perfect separation."""


class ClampWarning(UserWarning):
    """A correlation of magnitude ~1 was clamped before the Fisher transform."""


class UnstableIntervalWarning(UserWarning):
    """Too many bootstrap replicates failed for the interval to be trusted."""
