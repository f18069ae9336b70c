"""Conditional independence tests for mixed binary / count / continuous data."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import stats

from .dataset import Dataset
from .exceptions import ClampWarning, DegenerateDataError, InsufficientSampleError
from .graph import CausalGraph, d_separated

ALPHA_GRID = (0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
RIDGE = 1e-10
CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    dof: int
    clamped: bool = False
    alphas: tuple = field(default=ALPHA_GRID, repr=False)

    def independent(self, alpha: float) -> bool:
        return self.p_value > alpha

    @property
    def independent_at(self) -> dict:
        return {a: self.independent(a) for a in self.alphas}


def _canonical(d, x, y):
    # fixed argument order makes test(x, y | z) and test(y, x | z) bit-identical
    return (x, y) if d.names.index(x) <= d.names.index(y) else (y, x)


def _standardize(block, names):
    sd = block.std(axis=0)
    if np.any(sd == 0):
        bad = [nm for nm, s in zip(names, sd) if s == 0]
        raise DegenerateDataError(f"constant column(s): {bad}")
    return (block - block.mean(axis=0)) / sd


def _residualize(target, z):
    if z.shape[1] == 0:
        return target
    gram = z.T @ z
    gram[np.diag_indices_from(gram)] += RIDGE * len(z)
    coef = np.linalg.solve(gram, z.T @ target)
    return target - z @ coef


def partial_correlation(x, y, z) -> float:
    """Correlation of ``x`` and ``y`` after linear regression on ``z`` (with intercept)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z = np.asarray(z, float).reshape(len(x), -1)
    zc = z - z.mean(axis=0)
    rx = _residualize(x - x.mean(), zc)
    ry = _residualize(y - y.mean(), zc)
    sx, sy = np.sqrt(rx @ rx), np.sqrt(ry @ ry)
    if sx <= 1e-12 * math.sqrt(len(x)) or sy <= 1e-12 * math.sqrt(len(x)):
        raise DegenerateDataError("residual variance is zero after conditioning")
    return float(rx @ ry / (sx * sy))


def fisher_z(d: Dataset, x: str, y: str, z: Iterable[str] = ()) -> CITestResult:
    """Partial-correlation test with the Fisher z transform."""
    z = list(z)
    x, y = _canonical(d, x, y)
    n = d.n
    if n <= len(z) + 3:
        raise InsufficientSampleError(f"fisher_z needs n > |z| + 3 (n={n}, |z|={len(z)})")
    names = [x, y, *z]
    block = _standardize(d.matrix(names), names)
    r = partial_correlation(block[:, 0], block[:, 1], block[:, 2:])
    return fisher_z_from_r(r, n, len(z))


def fisher_z_from_r(r: float, n: int, k: int) -> CITestResult:
    clamped = abs(r) >= CLAMP
    if clamped:
        warnings.warn(f"|partial correlation| = {abs(r):.15f} clamped to {CLAMP}", ClampWarning, stacklevel=3)
        r = math.copysign(CLAMP, r)
    stat = math.atanh(r) * math.sqrt(n - k - 3)
    p = 2.0 * stats.norm.sf(abs(stat))
    return CITestResult(float(stat), float(min(1.0, p)), k, clamped)


def embed(d: Dataset, name: str) -> np.ndarray:
    """Degenerate-Gaussian embedding of one column.

    Binary columns become a one-hot block with the lowest level dropped;
    count and continuous columns pass through.
    """
    col = d.column(name)
    if d.spec(name).kind == "binary":
        levels = np.unique(col)
        if len(levels) < 2:
            raise DegenerateDataError(f"constant column: {name!r}")
        return np.column_stack([(col == lv).astype(float) for lv in levels[1:]])
    if np.all(col == col[0]):
        raise DegenerateDataError(f"constant column: {name!r}")
    return col[:, None]


def _logdet(cov):
    sign, val = np.linalg.slogdet(cov)
    if sign <= 0:
        raise DegenerateDataError("covariance is not positive definite")
    return val


def dg_lrt(d: Dataset, x: str, y: str, z: Iterable[str] = ()) -> CITestResult:
    """Gaussian likelihood-ratio test of x ⫫ y | z on the one-hot embedded space.

    statistic = n [log|S_xx.z| + log|S_yy.z| - log|S_(xy)(xy).z|], chi-square
    with dim(x) * dim(y) degrees of freedom.
    """
    z = list(z)
    x, y = _canonical(d, x, y)
    bx, by = embed(d, x), embed(d, y)
    bz = [embed(d, c) for c in z]
    dim = bx.shape[1] + by.shape[1] + sum(b.shape[1] for b in bz)
    n = d.n
    if dim >= n or n <= dim + 3:
        raise InsufficientSampleError(f"dg_lrt needs n > embedded dimension + 3 (n={n}, dim={dim})")
    block = np.column_stack([bx, by, *bz]) if bz else np.column_stack([bx, by])
    block = _standardize(block, [x] * bx.shape[1] + [y] * by.shape[1] + ["z"] * (dim - bx.shape[1] - by.shape[1]))
    cov = block.T @ block / n
    cov[np.diag_indices_from(cov)] += RIDGE
    px, py = bx.shape[1], by.shape[1]
    ix = np.arange(px)
    iy = np.arange(px, px + py)
    iz = np.arange(px + py, dim)
    ixy = np.arange(px + py)

    def conditional(idx):
        s = cov[np.ix_(idx, idx)]
        if len(iz):
            szz = cov[np.ix_(iz, iz)]
            s_iz = cov[np.ix_(idx, iz)]
            s = s - s_iz @ np.linalg.solve(szz, s_iz.T)
        return s

    stat = n * (_logdet(conditional(ix)) + _logdet(conditional(iy)) - _logdet(conditional(ixy)))
    stat = max(float(stat), 0.0)
    dof = px * py
    return CITestResult(stat, float(stats.chi2.sf(stat, dof)), dof)


class CITester:
    """Callable ``(x, y, z) -> CITestResult`` over a fixed dataset, with a result cache."""

    methods = {"fisher_z": fisher_z, "dg_lrt": dg_lrt}

    def __init__(self, data: Dataset, method: str = "dg_lrt"):
        if method not in self.methods:
            raise ValueError(f"unknown CI test {method!r}; choose from {sorted(self.methods)}")
        self.data = data
        self.method = method
        self._cache = {}

    @property
    def nodes(self):
        return self.data.names

    def __call__(self, x, y, z=()) -> CITestResult:
        key = (frozenset((x, y)), frozenset(z))
        if key not in self._cache:
            a, b = sorted((x, y))
            self._cache[key] = self.methods[self.method](self.data, a, b, sorted(z))
        return self._cache[key]


class DSeparationOracle:
    """CI 'test' that answers from d-separation in a known DAG (p = 1 or 0)."""

    method = "oracle"

    def __init__(self, graph: CausalGraph):
        self.graph = graph

    @property
    def nodes(self):
        return list(self.graph.nodes)

    def __call__(self, x, y, z=()) -> CITestResult:
        sep = d_separated(self.graph, x, y, z)
        return CITestResult(0.0 if sep else math.inf, 1.0 if sep else 0.0, len(tuple(z)))
