"""
Spectral Module for Amplab
Leading eigenpair, dual eigenvector, spectral gap and the spectral assumption
"""

import logging
from dataclasses import dataclass, field
from typing import List, Dict, Any

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import eigs, eigsh, splu, ArpackNoConvergence

from .config import DEFAULT_DENSE_CAP, DEFAULT_MAX_ITER
from .cone import GridFunction, ConeTolerance, ConeVerdict, cone_dominates, values_of
from .errors import SolverError, NoSpectralBoundError, FitError, DomainError

# Get logger
logger = logging.getLogger('Amplab')

RAY_ITERATIONS = 40
RAY_AGREEMENT = 1e-8
TIED_SHIFT = 1e-6


@dataclass(eq=False)
class SpectralReport:
    """Leading eigenvalue with right/left eigenvectors in the weighted pairing"""
    lambda0: float
    v: GridFunction
    phi: GridFunction
    gap: float
    c_dom: float
    phi_min: float
    residual: float = 0.0
    method: str = 'dense'
    rays_agree: bool = True

    def pairing(self, f):
        """<phi, f> in the weighted pairing"""
        return float(np.sum(self.v.space.weights * self.phi.values * values_of(f)))

    def to_dict(self):
        return {
            'lambda0': self.lambda0,
            'gap': self.gap,
            'c_dom': self.c_dom,
            'phi_min': self.phi_min,
            'residual': self.residual,
            'method': self.method,
            'rays_agree': self.rays_agree,
        }


@dataclass
class AssumptionVerdict:
    simple: bool
    v_dominates_u: ConeVerdict
    c_dom: float
    phi_strictly_positive: ConeVerdict
    phi_c: float
    overall: bool


@dataclass
class MeshDominationFit:
    """Decay exponent alpha of c_dom(h) ~ h^alpha, with the per-rung table"""
    alpha: float
    phi_alpha: float
    table: List[Dict[str, Any]] = field(default_factory=list)


def _normalize_ray(v, weights):
    v = np.asarray(v, dtype=float)
    total = float(np.sum(weights * v))
    if total < 0 or (total == 0 and v[np.argmax(np.abs(v))] < 0):
        v = -v
    top = np.max(np.abs(v))
    if top == 0:
        raise SolverError("Eigenvector iteration collapsed to zero")
    return v / top


def _inverse_iteration(solve, start, iterations):
    x = start / np.linalg.norm(start)
    for _ in range(iterations):
        x = solve(x)
        norm = np.linalg.norm(x)
        if not np.isfinite(norm) or norm == 0:
            raise SolverError("Inverse iteration broke down")
        x = x / norm
    return x


def _rays_agree(solve, size, seed):
    if size == 1:
        return True
    rng = np.random.default_rng(seed)
    first = _inverse_iteration(solve, rng.random(size) + 0.1, RAY_ITERATIONS)
    second = _inverse_iteration(solve, rng.random(size) + 0.1, RAY_ITERATIONS)
    return bool(abs(first @ second) >= 1.0 - RAY_AGREEMENT)


def _dense_eigenpair(operator, seed):
    matrix = operator.to_dense()
    weights = operator.space.weights
    size = operator.side
    scale = max(operator.scale, 1.0)

    if operator.is_symmetrizable():
        root = np.sqrt(weights)
        symmetric = matrix * root[:, None] / root[None, :]
        symmetric = 0.5 * (symmetric + symmetric.T)
        vals, vecs = linalg.eigh(symmetric)
        v = vecs[:, -1] / root
        # Rayleigh quotient in the weighted pairing
        lam0 = float(v @ (weights * (matrix @ v)) / (v @ (weights * v)))
        second = float(vals[-2]) if size > 1 else -np.inf
        gap = float(vals[-1] - second)
        left = weights * v
    else:
        vals, vl, vr = linalg.eig(matrix, left=True, right=True)
        order = np.argsort(-vals.real, kind='stable')
        top = vals[order[0]]
        if abs(top.imag) > 1e-8 * scale:
            raise NoSpectralBoundError(f"Eigenvalue of maximal real part {top:.6g} is not real")
        lam0 = float(top.real)
        second = float(vals[order[1]].real) if size > 1 else -np.inf
        gap = lam0 - second
        v = vr[:, order[0]].real
        left = vl[:, order[0]].real

    rays_agree = False
    if gap > 1e-8 * scale:
        shift = lam0 + (0.5 * gap if np.isfinite(gap) else 0.5)
        factors = linalg.lu_factor(shift * np.eye(size) - matrix)
        rays_agree = _rays_agree(lambda x: linalg.lu_solve(factors, x), size, seed)
    return lam0, v, left, gap, rays_agree


def _sparse_eigenpair(operator, seed, max_iter):
    matrix = operator.matrix
    weights = operator.space.weights
    size = operator.side
    scale = max(operator.scale, 1.0)
    ncv = min(size - 1, 64)

    try:
        if operator.is_symmetrizable():
            root = np.sqrt(weights)
            symmetric = sp.diags(root) @ matrix @ sp.diags(1.0 / root)
            symmetric = 0.5 * (symmetric + symmetric.T)
            vals = eigsh(symmetric, k=2, which='LA', ncv=ncv, tol=1e-12,
                         maxiter=max_iter * size, return_eigenvectors=False)
        else:
            vals = eigs(matrix, k=2, which='LR', ncv=ncv, tol=1e-12,
                        maxiter=max_iter * size, return_eigenvectors=False)
    except ArpackNoConvergence as e:
        raise SolverError(f"ARPACK did not converge: {e}")

    vals = np.asarray(vals, dtype=complex)
    vals = vals[np.argsort(-vals.real, kind='stable')]
    if abs(vals[0].imag) > 1e-8 * scale:
        raise NoSpectralBoundError(f"Eigenvalue of maximal real part {vals[0]:.6g} is not real")
    estimate = float(vals[0].real)
    gap = estimate - float(vals[1].real)
    separated = gap > 1e-8 * scale
    if separated:
        shift = estimate + 0.5 * gap
    else:
        # Tied pair: polish inside its eigenspace and let the ray check report it
        logger.warning(f"Leading eigenvalue {estimate:.6g} is not separated (gap {gap:.3g})")
        shift = estimate + TIED_SHIFT * scale
    factors = splu((shift * sp.identity(size, format='csc') - matrix).tocsc())

    # Positive start vector, converged until the ray stops moving
    x = np.ones(size) / np.sqrt(size)
    change = np.inf
    for _ in range(max_iter):
        y = factors.solve(x)
        y = y / np.linalg.norm(y)
        if y @ x < 0:
            y = -y
        change = np.max(np.abs(y - x))
        x = y
        if change <= 1e-13:
            break
    else:
        raise SolverError(f"Inverse iteration did not converge (last change {change:.3g})", residual=change)

    left = _inverse_iteration(lambda z: factors.solve(z, trans='T'), weights * x, RAY_ITERATIONS)
    lam0 = float(left @ (matrix @ x) / (left @ x))
    rays_agree = separated and _rays_agree(factors.solve, size, seed)
    return lam0, x, left, gap, rays_agree


def leading_eigenpair(operator, u=None, dense_cap=DEFAULT_DENSE_CAP, tol=None, seed=0, max_iter=DEFAULT_MAX_ITER):
    """Eigenvalue of maximal real part with its right and dual eigenvectors

    v is scaled to ||v||_inf = 1 with sum(w v) >= 0, phi is scaled so that
    <phi, v> = 1 in the weighted pairing. c_dom is measured against u
    (default: the constant 1).
    """
    space = operator.space
    weights = space.weights
    if operator.side <= dense_cap:
        lam0, v, left, gap, rays_agree = _dense_eigenpair(operator, seed)
        method = 'dense'
    else:
        if operator.side < 4:
            raise DomainError(f"Sparse eigensolver needs side >= 4, got {operator.side}")
        lam0, v, left, gap, rays_agree = _sparse_eigenpair(operator, seed, max_iter)
        method = 'sparse'

    v = _normalize_ray(v, weights)
    phi = left / weights
    pairing = float(np.sum(weights * phi * v))
    if abs(pairing) <= 1e-14 * np.sum(weights * np.abs(phi)):
        raise SolverError(f"Dual eigenvector is orthogonal to v at lambda0 = {lam0:.6g}")
    phi = phi / pairing

    residual = float(np.max(np.abs(operator.apply(v) - lam0 * v)))
    if residual > 1e-8 * max(operator.scale, np.finfo(float).tiny):
        raise SolverError(f"Eigenpair residual {residual:.3g} too large at lambda0 = {lam0:.6g}", residual=residual)

    u_values = values_of(u) if u is not None else np.ones(space.size)
    _, c_dom = cone_dominates(v, u_values, tol or ConeTolerance())
    report = SpectralReport(
        lambda0=lam0,
        v=GridFunction(v, space),
        phi=GridFunction(phi, space),
        gap=float(gap),
        c_dom=c_dom,
        phi_min=float(np.min(phi)),
        residual=residual,
        method=method,
        rays_agree=rays_agree,
    )
    logger.debug(f"Leading eigenpair ({method}): lambda0={lam0:.10g} gap={gap:.4g} c_dom={c_dom:.4g}")
    return report


def check_spectral_assumption(operator, u=None, tol=None, report=None, dense_cap=DEFAULT_DENSE_CAP):
    """Simple leading eigenvalue, v dominating u, and a strictly positive dual eigenvector"""
    tol = tol or ConeTolerance()
    u_values = values_of(u) if u is not None else np.ones(operator.side)
    if report is None:
        report = leading_eigenpair(operator, u=u_values, dense_cap=dense_cap, tol=tol)

    simple = bool(report.gap > 1e-8 * max(operator.scale, 1.0) and report.rays_agree)
    v_verdict, c_dom = cone_dominates(report.v, u_values, tol)
    phi_verdict, phi_c = cone_dominates(report.phi, np.ones(operator.side), tol)
    overall = simple and v_verdict.holds and phi_verdict.holds
    logger.info(f"Spectral assumption on {operator.family}: simple={simple} "
                f"v>=cu={v_verdict.holds} (c={c_dom:.4g}) phi>0={phi_verdict.holds}")
    return AssumptionVerdict(simple, v_verdict, c_dom, phi_verdict, phi_c, overall)


def mesh_robust_domination(builder, mesh, u_rule=None, tol=None, dense_cap=DEFAULT_DENSE_CAP):
    """Fit c_dom(h) ~ h^alpha across a mesh ladder

    alpha near 0 means v dominates u uniformly in h; alpha > 0 means the
    domination degenerates under refinement.
    """
    if len(mesh) < 3:
        raise DomainError(f"Mesh ladder needs at least 3 rungs, got {len(mesh)}")
    table = []
    for n in mesh:
        operator = builder(n)
        u = u_rule(operator.space) if u_rule is not None else np.ones(operator.side)
        report = leading_eigenpair(operator, u=u, dense_cap=dense_cap, tol=tol)
        table.append({'n': n, 'h': operator.space.h, 'c_dom': report.c_dom,
                      'phi_min': report.phi_min, 'lambda0': report.lambda0})
        logger.debug(f"Rung n={n}: h={operator.space.h:.4g} c_dom={report.c_dom:.6g}")

    h = np.array([row['h'] for row in table])
    c_dom = np.array([row['c_dom'] for row in table])
    if np.any(c_dom <= 0):
        raise FitError("Eigenvector does not dominate u on every rung", table)
    alpha = float(np.polyfit(np.log(h), np.log(c_dom), 1)[0])

    phi_min = np.array([row['phi_min'] for row in table])
    phi_alpha = float(np.polyfit(np.log(h), np.log(phi_min), 1)[0]) if np.all(phi_min > 0) else float('nan')
    logger.info(f"Mesh-robust domination: alpha={alpha:.4f} phi_alpha={phi_alpha:.4f}")
    return MeshDominationFit(alpha, phi_alpha, table)


def spectral_projection(report, f=None):
    """P = v <phi, .> as a dense matrix, or the vector P f when f is given"""
    if f is not None:
        return report.v.values * report.pairing(f)
    weights = report.v.space.weights
    return np.outer(report.v.values, report.phi.values * weights)
