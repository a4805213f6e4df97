"""
Cone Module for Amplab
Tolerance-aware cone arithmetic on grid functions
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .operators import GridSpace

# Get logger
logger = logging.getLogger('Amplab')


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values attached to the nodes of a grid space"""
    values: np.ndarray
    space: GridSpace

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.shape[0] != self.space.size:
            raise DomainError(f"{values.shape[0]} values for a space with {self.space.size} nodes")
        if not np.all(np.isfinite(values)):
            raise DomainError("Grid function has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, space, value=1.0):
        return cls(np.full(space.size, float(value)), space)

    @classmethod
    def from_callable(cls, space, func):
        """Evaluate func on the node coordinates (one row per node)"""
        return cls(np.asarray(func(space.nodes), dtype=float), space)

    def with_values(self, values):
        return GridFunction(values, self.space)

    def __len__(self):
        return self.space.size


@dataclass(frozen=True)
class ConeTolerance:
    """Relative and absolute slack for cone verdicts"""
    rel: float = 1e-9
    abs: float = 0.0

    def __post_init__(self):
        if self.rel < 0 or self.abs < 0:
            raise DomainError(f"Tolerances must be non-negative, got rel={self.rel} abs={self.abs}")
        if self.rel == 0 and self.abs == 0:
            raise DomainError("At least one of rel and abs must be positive")

    def threshold(self, scale):
        return self.rel * scale + self.abs


@dataclass(frozen=True)
class ConeVerdict:
    holds: bool
    margin: float
    witness_index: Optional[int]


def values_of(f):
    """Plain float array for a grid function or an array-like"""
    if isinstance(f, GridFunction):
        return f.values
    return np.asarray(f, dtype=float).ravel()


def _check_positive(u):
    if u.size and np.any(u <= 0):
        index = int(np.argmin(u))
        raise DomainError(f"Reference vector must be strictly positive, u[{index}] = {u[index]:.6g}")


def gauge_norm(f, u):
    """||f||_u = max_i |f_i| / u_i"""
    f = values_of(f)
    u = values_of(u)
    _check_positive(u)
    if f.size == 0:
        return 0.0
    return float(np.max(np.abs(f) / u))


def cone_nonneg(f, tol=None, scale=None):
    """f >= 0 up to rel * scale + abs; scale defaults to ||f||_inf"""
    tol = tol or ConeTolerance()
    f = values_of(f)
    if f.size == 0:
        return ConeVerdict(True, 0.0, None)
    if scale is None:
        scale = float(np.max(np.abs(f)))
    index = int(np.argmin(f))
    lowest = float(f[index])
    holds = lowest >= -tol.threshold(scale)
    margin = lowest / scale if scale > 0 else lowest
    return ConeVerdict(bool(holds), float(margin), index)


def cone_dominates(f, u, tol=None, scale=None):
    """Largest c with f >= c u, and whether c clears the tolerance threshold strictly

    The threshold scale defaults to ||f||_u, so the verdict is invariant
    under rescaling f.
    """
    tol = tol or ConeTolerance()
    f = values_of(f)
    u = values_of(u)
    _check_positive(u)
    if f.size == 0:
        return ConeVerdict(False, 0.0, None), 0.0
    ratios = f / u
    index = int(np.argmin(ratios))
    c = float(ratios[index])
    if scale is None:
        scale = float(np.max(np.abs(ratios)))
    holds = c > tol.threshold(scale)
    margin = c / scale if scale > 0 else c
    return ConeVerdict(bool(holds), float(margin), index), c


def lp_norm(f, p, weights=None):
    """Weighted L^p norm; p = inf is the plain maximum"""
    if p < 1:
        raise DomainError(f"lp_norm needs p >= 1, got {p}")
    values = np.abs(values_of(f))
    if weights is None:
        if not isinstance(f, GridFunction):
            raise DomainError("lp_norm of a plain array needs quadrature weights")
        weights = f.space.weights
    if values.size == 0:
        return 0.0
    top = float(values.max())
    if np.isinf(p):
        return top
    if top == 0.0:
        return 0.0
    return top * float(np.sum(weights * (values / top) ** p)) ** (1.0 / p)


def lower_constant(f, u):
    """Smallest c >= 0 with f >= -c u"""
    f = values_of(f)
    u = values_of(u)
    _check_positive(u)
    if f.size == 0:
        return 0.0
    return float(max(np.max(-f / u), 0.0))
