"""
Resolvent Module for Amplab
Shifted solves, the multi-point expansion identity, pole orders and window scans
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import splu, onenormest, LinearOperator

from .config import DEFAULT_DENSE_CAP
from .cone import (GridFunction, ConeTolerance, ConeVerdict, cone_nonneg, cone_dominates,
                   gauge_norm, lower_constant, values_of)
from .errors import SolverError, SpectrumError, PreconditionError, FitError, DomainError
from .records import TableData, WINDOW_COLUMNS, TRANSFER_COLUMNS, write_table
from .spectral import leading_eigenpair, check_spectral_assumption, spectral_projection

# Get logger
logger = logging.getLogger('Amplab')

RCOND_FLOOR = 1e-12
DENSE_DENSITY = 0.25
DENSE_SMALL_SIDE = 64
REFINE_STEPS = 3
RESIDUAL_REL = 1e-10
TRANSFER_GROWTH = 0.15
TRANSFER_FLOOR = 0.01
TRANSFER_LADDER = 20
TRANSFER_EXPANSION_TOL = 1e-9


class ShiftedSolver:
    """LU factorization of lam I - A with a reciprocal condition estimate

    Dense LAPACK factors are used for small or dense matrices, SuperLU
    otherwise. Every solve is checked and iteratively refined.
    """

    def __init__(self, operator, lam, dense_cap=DEFAULT_DENSE_CAP):
        self.operator = operator
        self.lam = float(lam)
        size = operator.side
        self.shifted = (self.lam * sp.identity(size, format='csr') - operator.matrix).tocsr()
        magnitude = abs(self.shifted)
        self.norm_bound = float(max(magnitude.sum(axis=1).max(), magnitude.sum(axis=0).max()))
        self._lu = None
        self._splu = None

        if size <= DENSE_SMALL_SIDE or (operator.density > DENSE_DENSITY and size <= dense_cap):
            dense = self.shifted.toarray()
            with warnings.catch_warnings():
                warnings.simplefilter('ignore', linalg.LinAlgWarning)
                self._lu = linalg.lu_factor(dense, check_finite=False)
            gecon, = linalg.get_lapack_funcs(('gecon',), (self._lu[0],))
            rcond, _ = gecon(self._lu[0], np.linalg.norm(dense, 1), norm='1')
        else:
            try:
                self._splu = splu(self.shifted.tocsc())
            except RuntimeError as e:
                raise SpectrumError(f"lambda = {self.lam:.10g} is in the numerical spectrum ({e})",
                                    lam=self.lam, condition=np.inf)
            inverse = LinearOperator((size, size), matvec=self._splu.solve,
                                     rmatvec=lambda x: self._splu.solve(x, trans='T'), dtype=float)
            rcond = 1.0 / (onenormest(self.shifted) * onenormest(inverse))

        self.rcond = float(rcond)
        if not np.isfinite(self.rcond) or self.rcond < RCOND_FLOOR:
            condition = 1.0 / self.rcond if self.rcond > 0 else np.inf
            raise SpectrumError(f"lambda = {self.lam:.10g} is in the numerical spectrum "
                                f"(condition estimate {condition:.3g})", lam=self.lam, condition=condition)

    def _raw_solve(self, rhs, transpose):
        if self._splu is not None:
            return self._splu.solve(rhs, trans='T' if transpose else 'N')
        return linalg.lu_solve(self._lu, rhs, trans=1 if transpose else 0, check_finite=False)

    def solve(self, rhs, transpose=False):
        rhs = np.asarray(rhs, dtype=float)
        matrix = self.shifted.T if transpose else self.shifted
        x = self._raw_solve(rhs, transpose)
        rhs_norm = float(np.max(np.abs(rhs))) if rhs.size else 0.0
        r_norm = np.inf
        for step in range(REFINE_STEPS + 1):
            if not np.all(np.isfinite(x)):
                raise SolverError(f"Non-finite solution at lambda = {self.lam:.10g}")
            residual = rhs - matrix @ x
            r_norm = float(np.max(np.abs(residual)))
            backward = 64 * np.finfo(float).eps * (self.norm_bound * float(np.max(np.abs(x))) + rhs_norm)
            if r_norm <= max(RESIDUAL_REL * rhs_norm, backward):
                return x
            if step < REFINE_STEPS:
                x = x + self._raw_solve(residual, transpose)
        raise SolverError(f"Solve at lambda = {self.lam:.10g} left residual {r_norm:.3g}", residual=r_norm)


class ResolventCache:
    """ShiftedSolver per point for one operator"""

    def __init__(self, operator, dense_cap=DEFAULT_DENSE_CAP):
        self.operator = operator
        self.dense_cap = dense_cap
        self._solvers = {}

    def solver(self, lam):
        key = float(lam)
        if key not in self._solvers:
            self._solvers[key] = ShiftedSolver(self.operator, key, self.dense_cap)
        return self._solvers[key]

    def apply(self, lam, f):
        return self.solver(lam).solve(values_of(f))


@dataclass
class ExpansionCheck:
    m: int
    lam: float
    points: Tuple[float, ...]
    residual: float


@dataclass
class PoleOrderFit:
    order: int
    exponent: float
    fit_residual: float
    table: List[dict] = field(default_factory=list)


@dataclass
class WindowPoint:
    offset: float
    lam: float
    verdict: Optional[ConeVerdict]
    c_value: float
    error: Optional[str] = None

    @property
    def passed(self):
        return self.verdict is not None and self.verdict.holds


@dataclass
class Window:
    """Largest scanned one-sided neighbourhood of lambda0 where the verdict holds"""
    side: str
    delta: float
    mode: str
    lambda0: float
    profile: List[WindowPoint] = field(default_factory=list)

    @property
    def nonempty(self):
        return self.delta > 0


@dataclass
class TransferPoint:
    """c_lambda(h) at one offset left of lambda0, one value per rung"""
    offset: float
    c_values: List[float]
    growth: float
    holds: bool


@dataclass
class TransferCase:
    index: int
    chains: List[Tuple[float, ...]]
    points: List[TransferPoint]
    hypothesis: bool
    holds: bool


@dataclass
class TransferResult:
    asserted: bool
    holds: bool
    cases: List[TransferCase] = field(default_factory=list)
    reason: str = ''
    mesh: List[int] = field(default_factory=list)
    h: List[float] = field(default_factory=list)


def apply_resolvent(operator, lam, f, cache=None):
    """x solving (lam I - A) x = f"""
    cache = cache or ResolventCache(operator)
    x = cache.apply(lam, f)
    return GridFunction(x, operator.space)


def _solve_at(cache, point, rhs):
    try:
        return cache.apply(point, rhs)
    except SpectrumError as e:
        raise SpectrumError(f"Inner solve failed at {point:.10g}: {e}", lam=point, condition=e.condition) from e
    except SolverError as e:
        raise SolverError(f"Inner solve failed at {point:.10g}: {e}", residual=e.residual) from e


def expansion_eval(operator, lam, points, f, cache=None):
    """Right-hand side of the m-point resolvent expansion applied to f

    Each product Res(mu_1)...Res(mu_k) is applied right to left. The
    residual is measured against a direct solve at lam.
    """
    cache = cache or ResolventCache(operator)
    points = tuple(float(mu) for mu in points)
    f = values_of(f)
    lhs = _solve_at(cache, lam, f)

    total = np.zeros_like(f)
    coefficient = 1.0
    nested = f
    for k in range(1, len(points) + 1):
        nested = f
        for j in range(k - 1, -1, -1):
            nested = _solve_at(cache, points[j], nested)
        total = total + coefficient * nested
        coefficient *= points[k - 1] - lam
    total = total + coefficient * _solve_at(cache, lam, nested)

    scale = float(np.max(np.abs(lhs))) if lhs.size else 0.0
    if scale == 0:
        scale = max(float(np.max(np.abs(total))) if total.size else 0.0, 1.0)
    residual = float(np.max(np.abs(lhs - total))) / scale if lhs.size else 0.0
    check = ExpansionCheck(len(points), float(lam), points, residual)
    logger.debug(f"Expansion m={check.m} at lambda={lam:.6g}: residual {residual:.3g}")
    return GridFunction(total, operator.space), check


def pole_order(operator, report, f, exponents=range(4, 17), cache=None):
    """Fit ||Res(lambda0 + eps) f||_inf ~ C eps^-m and round m

    Each table row also carries eps ||Res(lambda0 + eps) f - P f / eps||_inf,
    which tends to 0 when lambda0 is semisimple.
    """
    cache = cache or ResolventCache(operator)
    f = values_of(f)
    pairing = report.pairing(f)
    magnitude = float(np.sum(operator.space.weights * np.abs(report.phi.values) * np.abs(f)))
    if abs(pairing) <= 1e-10 * max(magnitude, np.finfo(float).tiny):
        raise PreconditionError(f"<phi, f> = {pairing:.3g} vanishes; the leading pole is invisible to f")

    base = report.gap if np.isfinite(report.gap) else 1.0
    projected = spectral_projection(report, f)
    table = []
    for j in exponents:
        eps = base * 2.0 ** (-j)
        x = cache.apply(report.lambda0 + eps, f)
        remainder = eps * float(np.max(np.abs(x - projected / eps)))
        table.append({'eps': eps, 'norm': float(np.max(np.abs(x))), 'remainder': remainder})

    log_eps = np.log([row['eps'] for row in table])
    log_norm = np.log([row['norm'] for row in table])
    slope, intercept = np.polyfit(log_eps, log_norm, 1)
    fit_residual = float(np.sqrt(np.mean((log_norm - (slope * log_eps + intercept)) ** 2)))
    exponent = -float(slope)
    order = int(round(exponent))
    if order < 1:
        raise FitError(f"No pole seen: fitted exponent {exponent:.3f}", table)
    logger.info(f"Pole order at lambda0={report.lambda0:.6g}: {order} (exponent {exponent:.4f})")
    return PoleOrderFit(order, exponent, fit_residual, table)


def geometric_offsets(base, count=20, per_octave=1):
    """Ascending offsets base * 2^(-j/per_octave), j = 1..count"""
    return [base * 2.0 ** (-j / per_octave) for j in range(count, 0, -1)]


def default_offsets(report, count=20, per_octave=1):
    base = report.gap if np.isfinite(report.gap) and report.gap > 0 else 1.0
    return geometric_offsets(base, count, per_octave)


def scan_window(operator, report, f, side, mode='plain', u=None, ladder=None, tol=None, cache=None):
    """Cone verdicts of +-Res(lambda0 +- eps) f along an ascending offset ladder

    Right side tests Res f >= 0 (plain) or Res f >= c u (strong); the left
    side tests the same for -Res f. delta is the largest offset of the
    passing prefix starting at the smallest offset.
    """
    if side not in ('left', 'right'):
        raise DomainError(f"side must be 'left' or 'right', got {side}")
    if mode not in ('plain', 'strong'):
        raise DomainError(f"mode must be 'plain' or 'strong', got {mode}")
    tol = tol or ConeTolerance()
    cache = cache or ResolventCache(operator)
    f = values_of(f)
    if not cone_nonneg(f, tol).holds or not np.any(f != 0):
        raise PreconditionError("scan_window needs f >= 0 and f != 0")
    u = values_of(u) if u is not None else np.ones(operator.side)

    offsets = list(ladder) if ladder is not None else default_offsets(report)
    if not offsets or any(eps <= 0 for eps in offsets) or any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DomainError("Offset ladder must be positive and strictly increasing")
    if np.isfinite(report.gap) and offsets[-1] >= report.gap:
        logger.warning(f"Offset ladder reaches {offsets[-1]:.4g}, beyond the spectral gap {report.gap:.4g}")

    sign = 1.0 if side == 'right' else -1.0
    profile = []
    for eps in offsets:
        lam = report.lambda0 + sign * eps
        try:
            x = sign * cache.apply(lam, f)
        except SolverError as e:
            logger.debug(f"Scan point lambda={lam:.10g} failed: {e}")
            profile.append(WindowPoint(eps, lam, None, float('nan'), str(e)))
            continue
        if mode == 'plain':
            verdict = cone_nonneg(x, tol)
            c_value = float(np.min(x / u))
        else:
            verdict, c_value = cone_dominates(x, u, tol)
        profile.append(WindowPoint(eps, lam, verdict, c_value))

    delta = 0.0
    for point in profile:
        if not point.passed:
            break
        delta = point.offset
    logger.debug(f"{side} {mode} window at lambda0={report.lambda0:.6g}: delta={delta:.4g}")
    return Window(side, delta, mode, report.lambda0, profile)


def window_table(window):
    rows = []
    for point in window.profile:
        if point.verdict is None:
            rows.append([point.offset, point.lam, 'error', float('nan'), point.c_value])
        else:
            rows.append([point.offset, point.lam, 'pass' if point.verdict.holds else 'fail',
                         point.verdict.margin, point.c_value])
    return TableData(list(WINDOW_COLUMNS), rows)


def export_window_csv(window, path):
    write_table(path, window_table(window))


def _passing_chain(cache, report, f, offsets, index, tol):
    """mu_1..mu_index > lambda0 with Res(mu_k) (g_(k-1) + c v) >= 0, g_k = Res(mu_k)...Res(mu_1) f

    Each mu_k is the farthest passing point of the ladder. None when some
    step finds no passing point.
    """
    v = report.v.values
    current = f
    chain = []
    for _ in range(index):
        lifted = current + lower_constant(current, v) * v
        for eps in sorted(offsets, reverse=True):
            mu = report.lambda0 + eps
            try:
                passed = cone_nonneg(cache.apply(mu, lifted), tol).holds
            except SolverError:
                continue
            if passed:
                break
        else:
            return None
        chain.append(mu)
        current = cache.apply(mu, current)
    return tuple(chain)


def _growth(h, c_values):
    """Slope of log c against log 1/h, with c floored at TRANSFER_FLOOR * max c"""
    c = np.asarray(c_values, dtype=float)
    top = float(c.max())
    if top == 0:
        return 0.0
    return float(np.polyfit(np.log(1.0 / np.asarray(h)), np.log(c + TRANSFER_FLOOR * top), 1)[0])


def window_transfer_check(builder, mesh, f_rule, u_rule=None, tol=None, n_points=10, index=1,
                          threshold=TRANSFER_GROWTH, dense_cap=DEFAULT_DENSE_CAP):
    """Carry right-side estimates to the left of lambda0 across a mesh ladder

    On every rung each f gets a chain mu_1..mu_index of passing points right of
    lambda0. Res(lambda) f at n_points lambda in (lambda0 - gap, lambda0) is
    evaluated through the expansion at that chain, and c_lambda(h) is the
    smallest c with Res(lambda) f >= -c u. The estimate transfers when
    c_lambda stays bounded under refinement: growth in 1/h at most threshold
    at every lambda. f_rule(space) returns the same continuum functions on
    every rung. Nothing is asserted unless the spectral assumption holds on
    every rung.
    """
    if len(mesh) < 2:
        raise DomainError(f"Transfer check needs at least 2 rungs, got {len(mesh)}")
    if index < 1 or n_points < 1:
        raise DomainError(f"index and n_points must be positive, got {index} and {n_points}")
    tol = tol or ConeTolerance(rel=1e-8)

    rungs = []
    for n in mesh:
        operator = builder(n)
        u = u_rule(operator.space) if u_rule is not None else np.ones(operator.side)
        report = leading_eigenpair(operator, u=u, dense_cap=dense_cap, tol=tol)
        if not check_spectral_assumption(operator, u, tol, report).overall:
            logger.info(f"Transfer check not asserted: spectral assumption fails at n={n}")
            return TransferResult(False, True, [], f"spectral assumption fails at n={n}", list(mesh))
        rungs.append((operator, u, report))

    gaps = [report.gap for _, _, report in rungs if np.isfinite(report.gap)]
    span = min(gaps) if gaps else 1.0
    offsets = [span * k / (n_points + 1) for k in range(1, n_points + 1)]
    right_ladder = geometric_offsets(span, TRANSFER_LADDER)

    chains = []
    c_table = []
    for operator, u, report in rungs:
        cache = ResolventCache(operator, dense_cap)
        rung_chains = []
        rung_c = []
        for f in f_rule(operator.space):
            f = values_of(f)
            chain = _passing_chain(cache, report, f, right_ladder, index, tol)
            rung_chains.append(chain)
            if chain is None:
                rung_c.append([float('nan')] * n_points)
                continue
            row = []
            for eps in offsets:
                value, check = expansion_eval(operator, report.lambda0 - eps, chain, f, cache)
                if check.residual > TRANSFER_EXPANSION_TOL:
                    raise SolverError(f"Expansion residual {check.residual:.3g} at lambda0 - {eps:.4g}",
                                      residual=check.residual)
                row.append(lower_constant(value, u))
            rung_c.append(row)
        chains.append(rung_chains)
        c_table.append(rung_c)

    h = [operator.space.h for operator, _, _ in rungs]
    counts = {len(rung_c) for rung_c in c_table}
    if len(counts) != 1:
        raise DomainError(f"f_rule returned different batch sizes across rungs: {sorted(counts)}")

    cases = []
    for i in range(counts.pop()):
        case_chains = [rung_chains[i] for rung_chains in chains]
        if any(chain is None for chain in case_chains):
            logger.warning(f"Transfer: no passing right-side point for f #{i}")
            cases.append(TransferCase(i, case_chains, [], False, True))
            continue
        points = []
        for j, eps in enumerate(offsets):
            c_values = [rung_c[i][j] for rung_c in c_table]
            growth = _growth(h, c_values)
            points.append(TransferPoint(eps, c_values, growth, growth <= threshold))
        holds = all(point.holds for point in points)
        if not holds:
            worst = max(point.growth for point in points)
            logger.warning(f"Transfer failed for f #{i}: c_lambda grows like h^-{worst:.3f}")
        cases.append(TransferCase(i, case_chains, points, True, holds))

    holds = all(case.holds for case in cases)
    family = rungs[0][0].family
    logger.info(f"Transfer check on {family}: {sum(c.holds for c in cases)}/{len(cases)} pass")
    return TransferResult(True, holds, cases, '', list(mesh), h)


def transfer_table(result):
    rows = []
    for case in result.cases:
        for point in case.points:
            for n, h, c in zip(result.mesh, result.h, point.c_values):
                rows.append([case.index, point.offset, n, h, c, point.growth, point.holds])
    return TableData(list(TRANSFER_COLUMNS), rows)
