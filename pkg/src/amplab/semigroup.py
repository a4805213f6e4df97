"""
Semigroup Module for Amplab
Matrix exponential action, L^p -> L^inf norms, smoothing fits and domination diagnostics
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.integrate import quad
from scipy.sparse.linalg import expm_multiply

from .config import DEFAULT_DENSE_CAP
from .cone import GridFunction, ConeTolerance, cone_nonneg, gauge_norm, lp_norm, values_of
from .errors import DomainError, PreconditionError, SolverError, FitError
from .resolvent import ShiftedSolver
from .spectral import leading_eigenpair

# Get logger
logger = logging.getLogger('Amplab')

PROBE_LIMIT = 64
RESOLUTION_FACTOR = 4.0
DIFFERENTIAL_FAMILIES = ('laplacian', 'coupled', 'dtn', 'power')


@dataclass
class NormEstimate:
    value: float
    exact: bool


@dataclass
class SmoothingFit:
    """||e^{tA}||_{p->inf} ~ c t^-q over t_range"""
    q: float
    c: float
    t_range: Tuple[float, float]
    fit_residual: float
    n_implied: int
    table: List[dict] = field(default_factory=list)


@dataclass
class DominationDiagnostic:
    n: int
    growth_exponent: float
    verdict: str
    table: List[dict] = field(default_factory=list)
    estimate: bool = False

    @property
    def robust(self):
        return self.verdict == 'robust'


@dataclass
class LaplaceCertificate:
    n: int
    exponent: float
    value: float
    finite: bool


def _check_p(p):
    if np.isinf(p):
        raise DomainError("p = inf is not supported for p -> inf norms")
    if p < 1:
        raise DomainError(f"p must be at least 1, got {p}")


def expm_apply(operator, t, f, dense_cap=DEFAULT_DENSE_CAP):
    """e^{tA} f; t = 0 returns f unchanged"""
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    values = values_of(f)
    if t == 0:
        return GridFunction(values.copy(), operator.space)
    with np.errstate(over='ignore', invalid='ignore'):
        if operator.side <= dense_cap:
            result = linalg.expm(t * operator.to_dense()) @ values
        else:
            result = expm_multiply(t * operator.matrix.tocsc(), values)
    if not np.all(np.isfinite(result)):
        raise SolverError(f"e^(tA) f overflowed at t={t:.4g}; "
                          f"rescale t below {1.0 / max(operator.scale, 1.0):.3g} per step")
    return GridFunction(result, operator.space)


def positivity_profile(operator, f, t_values, tol=None, dense_cap=DEFAULT_DENSE_CAP):
    """Cone verdict of e^{tA} f at every t"""
    tol = tol or ConeTolerance()
    return [(float(t), cone_nonneg(expm_apply(operator, t, f, dense_cap), tol)) for t in t_values]


def _row_norms(matrix, weights, p):
    """Dual norms of the weighted rows: (sum_j |T_ij|^p' w_j^(1-p'))^(1/p')"""
    magnitude = np.abs(matrix) / weights[None, :]
    top = magnitude.max(axis=1)
    if p == 1:
        return top
    conjugate = p / (p - 1.0)
    safe = np.where(top > 0, top, 1.0)
    return top * np.sum(weights[None, :] * (magnitude / safe[:, None]) ** conjugate, axis=1) ** (1.0 / conjugate)


def opnorm_p_to_inf(T, space, p, u=None, probe_nodes=None):
    """||T||_{L^p -> E_u}: exact for an explicit matrix, a probe lower bound for a callable"""
    _check_p(p)
    weights = space.weights
    u = values_of(u) if u is not None else np.ones(space.size)

    if callable(T):
        nodes = probe_nodes
        if nodes is None:
            nodes = np.unique(np.linspace(0, space.size - 1, min(space.size, PROBE_LIMIT)).astype(int))
        best = 0.0
        probes = [np.ones(space.size)]
        for node in nodes:
            bump = np.zeros(space.size)
            bump[node] = 1.0
            probes.append(bump)
        for probe in probes:
            probe = probe / lp_norm(probe, p, weights)
            best = max(best, gauge_norm(T(probe), u))
        logger.warning(f"Operator norm estimated from {len(probes)} probes (lower bound)")
        return NormEstimate(float(best), False)

    matrix = T.toarray() if sp.issparse(T) else np.atleast_2d(np.asarray(T, dtype=float))
    if not np.any(matrix):
        return NormEstimate(0.0, True)
    norms = _row_norms(matrix, weights, p) / u
    return NormEstimate(float(norms.max()), True)


def _semigroup_norms(operator, p, t_values, u):
    weights = operator.space.weights
    if operator.is_symmetrizable():
        root = np.sqrt(weights)
        dense = operator.to_dense()
        symmetric = dense * root[:, None] / root[None, :]
        vals, vecs = linalg.eigh(0.5 * (symmetric + symmetric.T))
        norms = []
        for t in t_values:
            growth = np.exp(t * vals)
            if p == 2:
                squared = (vecs ** 2) @ (growth ** 2) / weights
                norms.append(float(np.max(np.sqrt(squared) / u)))
            else:
                semigroup = (vecs * growth[None, :]) @ vecs.T * (root[None, :] / root[:, None])
                norms.append(float(np.max(_row_norms(semigroup, weights, p) / u)))
        return norms
    dense = operator.to_dense()
    return [float(np.max(_row_norms(linalg.expm(t * dense), weights, p) / u)) for t in t_values]


def smoothing_fit(operator, p, t_ladder, u=None, max_rms=0.05, dense_cap=DEFAULT_DENSE_CAP):
    """Least-squares fit of log ||e^{tA}||_{p->inf} against log t

    The ladder must be geometric with at least 6 points and start above the
    resolution floor RESOLUTION_FACTOR * h^2 for grid operators.
    """
    _check_p(p)
    t_values = np.sort(np.asarray(t_ladder, dtype=float))
    if t_values.size < 6:
        raise DomainError(f"Smoothing fit needs at least 6 times, got {t_values.size}")
    if np.any(t_values <= 0):
        raise DomainError("Times must be positive")
    ratios = t_values[1:] / t_values[:-1]
    if np.ptp(ratios) > 1e-6 * ratios.mean() or np.any(ratios <= 1):
        raise DomainError("Time ladder must be geometric and strictly increasing")
    if operator.family in DIFFERENTIAL_FAMILIES:
        floor = RESOLUTION_FACTOR * operator.space.h ** 2
        if t_values[0] < floor:
            raise PreconditionError(f"t_min = {t_values[0]:.3g} is below the resolution floor {floor:.3g}")
    if operator.side > dense_cap:
        raise DomainError(f"Smoothing fit needs an explicit semigroup; side {operator.side} exceeds {dense_cap}")

    u = values_of(u) if u is not None else np.ones(operator.side)
    norms = np.array(_semigroup_norms(operator, p, t_values, u))
    log_t = np.log(t_values)
    log_norm = np.log(norms)
    slope, intercept = np.polyfit(log_t, log_norm, 1)
    prediction = slope * log_t + intercept
    rms = float(np.sqrt(np.mean((log_norm - prediction) ** 2)))
    q = -float(slope)
    c = float(np.exp(intercept))
    table = [{'t': float(t), 'norm': float(norm), 'prediction': float(np.exp(pred))}
             for t, norm, pred in zip(t_values, norms, prediction)]
    if rms > max_rms:
        raise FitError(f"No power law: RMS log residual {rms:.3g} exceeds {max_rms}", table)

    n_implied = max(1, int(np.floor(q)) + 1)
    logger.info(f"Smoothing fit on {operator.family} (p={p}): q={q:.4f} c={c:.4g} rms={rms:.3g} n={n_implied}")
    return SmoothingFit(q, c, (float(t_values[0]), float(t_values[-1])), rms, n_implied, table)


def laplace_transform_certificate(fit, lam, n=None):
    """Quadrature of int_0^t0 t^(n-1) e^(-lam t) c t^(-q) dt; finite iff n - 1 - q > -1"""
    n = n or fit.n_implied
    exponent = n - 1 - fit.q
    if exponent <= -1:
        return LaplaceCertificate(n, exponent, float('inf'), False)
    value, _ = quad(lambda t: np.exp(-lam * t), 0.0, fit.t_range[1], weight='alg', wvar=(exponent, 0.0))
    value = fit.c * value
    return LaplaceCertificate(n, exponent, float(value), bool(np.isfinite(value)))


def nearest_node(space, point):
    point = np.asarray(point, dtype=float)
    return int(np.argmin(np.sum((space.nodes - point[None, :]) ** 2, axis=1)))


def bump_probe_ratios(operator, p, sigma, centre, radii, u=None, dense_cap=DEFAULT_DENSE_CAP):
    """||Res(sigma) f_w||_u / ||f_w||_p for ball indicators f_w normalized in L^p"""
    _check_p(p)
    space = operator.space
    u = values_of(u) if u is not None else np.ones(space.size)
    solver = ShiftedSolver(operator, sigma, dense_cap)
    distance = np.sqrt(np.sum((space.nodes - np.asarray(centre, dtype=float)[None, :]) ** 2, axis=1))
    rows = []
    for radius in radii:
        bump = (distance <= radius).astype(float)
        if not np.any(bump):
            bump[np.argmin(distance)] = 1.0
        bump = bump / lp_norm(bump, p, space.weights)
        rows.append({'w': float(radius), 'ratio': gauge_norm(solver.solve(bump), u)})
    return rows


def centre_row_norms(operator, p, sigma, node, n_max=1, u=None, dense_cap=DEFAULT_DENSE_CAP):
    """Dual norm of row `node` of Res(sigma)^k for k = 1..n_max

    The row is the response at `node` to its extremal probe, so each value
    bounds ||Res(sigma)^k||_{p->inf} from below.
    """
    _check_p(p)
    space = operator.space
    u = values_of(u) if u is not None else np.ones(space.size)
    solver = ShiftedSolver(operator, sigma, dense_cap)
    row = np.zeros(space.size)
    row[node] = 1.0
    norms = []
    for _ in range(n_max):
        row = solver.solve(row, transpose=True)
        norms.append(float(_row_norms(row[None, :], space.weights, p)[0] / u[node]))
    return norms


def domination_index(builder, p, mesh, n_max=1, sigma=None, mode='explicit', u_rule=None,
                     threshold=0.1, probe_point=None, dense_cap=DEFAULT_DENSE_CAP):
    """Growth of ||Res(sigma, A)^n||_{p->inf} in 1/h for n = 1..n_max

    mode='explicit' forms Res(sigma)^n densely and takes the exact norm;
    mode='probe' uses the row at probe_point (default: the node nearest the
    centre of the domain). sigma defaults to lambda0 + 1 on each rung.
    """
    _check_p(p)
    if n_max < 1:
        raise DomainError(f"n_max must be at least 1, got {n_max}")
    if len(mesh) < 2:
        raise DomainError(f"Mesh ladder needs at least 2 rungs, got {len(mesh)}")
    if mode not in ('explicit', 'probe'):
        raise DomainError(f"Unknown domination mode '{mode}'")

    tables = {k: [] for k in range(1, n_max + 1)}
    for n in mesh:
        operator = builder(n)
        space = operator.space
        u = u_rule(space) if u_rule is not None else np.ones(space.size)
        shift = sigma if sigma is not None else leading_eigenpair(operator, dense_cap=dense_cap).lambda0 + 1.0

        if mode == 'explicit':
            if operator.side > dense_cap:
                raise DomainError(f"Explicit mode needs side <= {dense_cap}, got {operator.side}; use probe mode")
            green = ShiftedSolver(operator, shift, dense_cap).solve(np.eye(operator.side))
            power = green
            norms = []
            for k in range(1, n_max + 1):
                norms.append(opnorm_p_to_inf(power, space, p, u).value)
                power = power @ green
        else:
            point = probe_point if probe_point is not None else np.full(space.nodes.shape[1], 0.5)
            norms = centre_row_norms(operator, p, shift, nearest_node(space, point), n_max, u, dense_cap)

        for k, norm in enumerate(norms, start=1):
            tables[k].append({'n': n, 'h': space.h, 'norm': norm})
        logger.debug(f"Domination rung n={n}: h={space.h:.4g} norms={norms}")

    diagnostics = []
    for k, table in tables.items():
        inverse_h = np.log([1.0 / row['h'] for row in table])
        log_norm = np.log([row['norm'] for row in table])
        slope, intercept = np.polyfit(inverse_h, log_norm, 1)
        for row, x in zip(table, inverse_h):
            row['prediction'] = float(np.exp(intercept + slope * x))
        verdict = 'robust' if slope <= threshold else 'degenerate'
        diagnostics.append(DominationDiagnostic(k, float(slope), verdict, table, mode == 'probe'))
        logger.info(f"Domination index n={k} (p={p}, {mode}): growth {slope:.4f} -> {verdict}")
    return diagnostics


def smallest_robust(diagnostics):
    for diagnostic in diagnostics:
        if diagnostic.robust:
            return diagnostic.n
    return None
