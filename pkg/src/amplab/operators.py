"""
Operators Module for Amplab
Builders for the model operators as sparse matrices on weighted grids
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Dict, Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import DomainError, ValidationError

# Get logger
logger = logging.getLogger('Amplab')

FAMILIES = ('rank_one', 'laplacian', 'coupled', 'dtn', 'power', 'matrix')
BC_KINDS = ('dirichlet', 'neumann', 'robin')


@dataclass(eq=False)
class GridSpace:
    """Discretization metadata: nodes, quadrature weights and boundary nodes

    Coupled systems live on a tiled space: the node set repeated once per
    component, component-major.
    """
    dim: int
    nodes: np.ndarray
    weights: np.ndarray
    boundary_nodes: np.ndarray
    h: float
    measure: float
    components: int = 1

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim == 1:
            self.nodes = self.nodes[:, None]
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.boundary_nodes = np.asarray(self.boundary_nodes, dtype=int).ravel()

        count = len(self.weights)
        if count == 0:
            raise DomainError("A grid space needs at least one node")
        if self.nodes.shape[0] != count:
            raise DomainError(f"{self.nodes.shape[0]} node coordinates for {count} weights")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise DomainError("Quadrature weights must be finite and strictly positive")
        total = float(self.weights.sum())
        if abs(total - self.measure) > 1e-12 * max(abs(self.measure), 1.0):
            raise DomainError(f"Weights sum to {total!r}, expected measure {self.measure!r}")
        if self.boundary_nodes.size and (self.boundary_nodes.min() < 0 or self.boundary_nodes.max() >= count):
            raise DomainError("Boundary node index outside the node range")

    @property
    def size(self):
        return len(self.weights)

    @classmethod
    def discrete(cls, m):
        """Unit-measure cell-centred space for plain matrices"""
        if m < 1:
            raise DomainError(f"Space size must be positive, got {m}")
        return cls(
            dim=1,
            nodes=(np.arange(m) + 0.5) / m,
            weights=np.full(m, 1.0 / m),
            boundary_nodes=np.empty(0, dtype=int),
            h=1.0 / m,
            measure=float(np.full(m, 1.0 / m).sum()),
        )

    def tiled(self, count):
        """Product space for `count` components, component-major"""
        if count < 1:
            raise DomainError(f"Component count must be positive, got {count}")
        offsets = (np.arange(count) * self.size)[:, None]
        weights = np.tile(self.weights, count)
        return GridSpace(
            dim=self.dim,
            nodes=np.tile(self.nodes, (count, 1)),
            weights=weights,
            boundary_nodes=(offsets + self.boundary_nodes[None, :]).ravel(),
            h=self.h,
            measure=float(weights.sum()),
            components=self.components * count,
        )

    def ones(self):
        return np.ones(self.size)

    def to_dict(self):
        return {
            'dim': int(self.dim),
            'h': float(self.h),
            'measure': float(self.measure),
            'components': int(self.components),
            'nodes': self.nodes.tolist(),
            'weights': self.weights.tolist(),
            'boundary_nodes': self.boundary_nodes.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            dim=data['dim'],
            nodes=np.array(data['nodes'], dtype=float),
            weights=np.array(data['weights'], dtype=float),
            boundary_nodes=np.array(data['boundary_nodes'], dtype=int),
            h=data['h'],
            measure=data['measure'],
            components=data.get('components', 1),
        )


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Boundary condition kind with the Robin coefficient beta (scalar or per boundary node)"""
    kind: str
    beta: Optional[Any] = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in BC_KINDS:
            raise DomainError(f"Unknown boundary condition '{self.kind}'")
        object.__setattr__(self, 'kind', kind)
        if kind == 'robin' and self.beta is None:
            raise DomainError("Robin boundary condition needs beta")
        if kind != 'robin' and self.beta is not None:
            raise DomainError(f"beta is only meaningful for Robin conditions, not {kind}")

    @classmethod
    def dirichlet(cls):
        return cls('dirichlet')

    @classmethod
    def neumann(cls):
        return cls('neumann')

    @classmethod
    def robin(cls, beta):
        return cls('robin', beta)

    def beta_param(self):
        if self.beta is None:
            return None
        if np.ndim(self.beta) == 0:
            return float(self.beta)
        return np.asarray(self.beta, dtype=float).tolist()


@dataclass(eq=False)
class GridOperator:
    """Sparse matrix together with its grid, family tag and build parameters"""
    matrix: Any
    space: GridSpace
    family: str
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix, dtype=float)
        rows, cols = self.matrix.shape
        if rows != cols:
            raise DomainError(f"Operator matrix must be square, got {rows}x{cols}")
        if rows != self.space.size:
            raise DomainError(f"Matrix side {rows} does not match {self.space.size} grid nodes")
        if not np.all(np.isfinite(self.matrix.data)):
            raise DomainError("Operator matrix has non-finite entries")
        if self.family not in FAMILIES:
            raise DomainError(f"Unknown operator family '{self.family}'")

    @property
    def side(self):
        return self.matrix.shape[0]

    @property
    def scale(self):
        """Infinity norm of the matrix"""
        return float(abs(self.matrix).sum(axis=1).max())

    @property
    def density(self):
        return self.matrix.nnz / float(self.side * self.side)

    def to_dense(self):
        return self.matrix.toarray()

    def apply(self, values):
        return self.matrix @ np.asarray(values, dtype=float)

    def transposed(self):
        params = dict(self.params, transposed=not self.params.get('transposed', False))
        return GridOperator(self.matrix.T.tocsr(), self.space, self.family, params)

    def is_metzler(self, tol=0.0):
        off = (self.matrix - sp.diags(self.matrix.diagonal())).tocsr()
        off.eliminate_zeros()
        if off.nnz == 0:
            return True
        return bool(off.data.min() >= -tol * max(self.scale, 1.0))

    def is_symmetrizable(self, tol=1e-10):
        """True when diag(w) @ A is symmetric, i.e. A is self-adjoint in the weighted pairing"""
        weighted = (sp.diags(self.space.weights) @ self.matrix).tocsr()
        if weighted.nnz == 0:
            return True
        skew = abs(weighted - weighted.T)
        return bool(skew.max() <= tol * abs(weighted).max())


def from_matrix(matrix, space=None, family='matrix', params=None):
    """Wrap a plain matrix on a unit-measure discrete space"""
    matrix = sp.csr_matrix(np.atleast_2d(matrix) if not sp.issparse(matrix) else matrix, dtype=float)
    if space is None:
        space = GridSpace.discrete(matrix.shape[0])
    return GridOperator(matrix, space, family, dict(params or {}))


def dirichlet_min_eigenvalue(d, n, h=None):
    """Smallest eigenvalue of the FD -Laplacian with n interior nodes per axis"""
    if h is None:
        h = 1.0 / (n + 1)
    return d * 4.0 / h ** 2 * np.sin(np.pi * h / 2.0) ** 2


def _second_difference(n, h, kind):
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    stencil = sp.diags([off, main, off], [-1, 0, 1], format='lil')
    if kind != 'dirichlet':
        # Ghost-node elimination at both ends
        stencil[0, 1] = 2.0
        stencil[n - 1, n - 2] = 2.0
    return stencil.tocsr() / h ** 2


def _kron_sum(stencil, d):
    n = stencil.shape[0]
    identity = sp.identity(n, format='csr')
    total = sp.csr_matrix((n ** d, n ** d))
    for axis in range(d):
        term = stencil if axis == 0 else identity
        for other in range(1, d):
            term = sp.kron(term, stencil if other == axis else identity, format='csr')
        total = total + term
    return total.tocsr()


def _tensor_grid(x, d):
    mesh = np.meshgrid(*([x] * d), indexing='ij')
    return np.stack([axis.ravel() for axis in mesh], axis=1)


def _tensor_weights(w, d):
    weights = w
    for _ in range(d - 1):
        weights = np.kron(weights, w)
    return weights


def build_rank_one(n):
    """A f = (sum_j w_j f_j) 1 - f on n cell-centred nodes of [0, 1]"""
    if int(n) != n or n < 2:
        raise DomainError(f"rank_one needs n >= 2, got {n}")
    n = int(n)
    space = GridSpace.discrete(n)
    matrix = np.outer(np.ones(n), space.weights) - np.eye(n)
    logger.debug(f"Built rank_one operator with n={n}")
    return GridOperator(sp.csr_matrix(matrix), space, 'rank_one', {'n': n})


def build_laplacian(d, n, bc):
    """Second-order finite-difference Laplacian on [0, 1]^d

    Dirichlet: n interior nodes per axis, h = 1/(n+1).
    Neumann/Robin: n nodes per axis including the boundary, h = 1/(n-1),
    trapezoid weights, ghost nodes eliminated. The Robin row at x=0 reads
    (-2 - 2 h beta) / h^2, so beta > 0 is dissipative.
    """
    if d not in (1, 2, 3):
        raise DomainError(f"Dimension must be 1, 2 or 3, got {d}")
    if int(n) != n or n < 3:
        raise DomainError(f"Need at least 3 nodes per axis, got {n}")
    n = int(n)
    if isinstance(bc, str):
        bc = BoundaryCondition(bc)

    if bc.kind == 'dirichlet':
        h = 1.0 / (n + 1)
        x = np.arange(1, n + 1) * h
        w1 = np.full(n, h)
        weights = _tensor_weights(w1, d)
        boundary = np.empty(0, dtype=int)
        measure = float(weights.sum())
    else:
        h = 1.0 / (n - 1)
        x = np.linspace(0.0, 1.0, n)
        w1 = np.full(n, h)
        w1[0] = w1[-1] = h / 2.0
        weights = _tensor_weights(w1, d)
        index = np.indices((n,) * d).reshape(d, -1).T
        on_face = (index == 0) | (index == n - 1)
        boundary = np.flatnonzero(on_face.any(axis=1))
        measure = float(weights.sum())

    space = GridSpace(dim=d, nodes=_tensor_grid(x, d), weights=weights,
                      boundary_nodes=boundary, h=h, measure=measure)
    matrix = _kron_sum(_second_difference(n, h, bc.kind), d)

    if bc.kind == 'robin':
        beta = np.asarray(bc.beta, dtype=float)
        beta_full = np.zeros(space.size)
        if beta.ndim == 0:
            beta_full[boundary] = float(beta)
        elif beta.shape == (len(boundary),):
            beta_full[boundary] = beta
        else:
            raise DomainError(f"Robin beta needs one value per boundary node ({len(boundary)}), got shape {beta.shape}")
        faces = on_face.sum(axis=1)
        matrix = (matrix + sp.diags(-2.0 / h * beta_full * faces)).tocsr()

    logger.debug(f"Built {bc.kind} Laplacian d={d} n={n} h={h:.4g} side={space.size}")
    params = {'d': int(d), 'n': n, 'bc': bc.kind, 'beta': bc.beta_param()}
    return GridOperator(matrix, space, 'laplacian', params)


def build_coupled(n, d, N, V):
    """diag(Lap_Neu, ..., Lap_Neu) + V on N components, component-major

    V is either one N x N matrix for every node or an array of shape (nodes, N, N).
    """
    if int(N) != N or N < 1:
        raise DomainError(f"Component count must be positive, got {N}")
    N = int(N)
    base = build_laplacian(d, n, BoundaryCondition.neumann())
    m = base.side

    V = np.asarray(V, dtype=float)
    constant = V.shape == (N, N)
    if constant:
        V = np.broadcast_to(V, (m, N, N))
    elif V.shape != (m, N, N):
        raise DomainError(f"Potential must have shape ({N},{N}) or ({m},{N},{N}), got {V.shape}")
    if not np.all(np.isfinite(V)):
        raise DomainError("Potential has non-finite entries")

    off_mask = ~np.eye(N, dtype=bool)
    off_values = V[:, off_mask]
    if np.any(off_values < 0):
        node, slot = np.unravel_index(np.argmin(off_values), off_values.shape)
        a, b = np.argwhere(off_mask)[slot]
        raise ValidationError(f"Coupling entry V[{a},{b}] = {off_values[node, slot]:.6g} at node {node} is negative")

    if N > 1:
        pattern = np.zeros((N, N), dtype=bool)
        pattern[off_mask] = (off_values > 0).any(axis=0)
        count, _ = connected_components(sp.csr_matrix(pattern), directed=True, connection='strong')
        if count != 1:
            raise ValidationError(f"Coupling pattern is reducible ({count} strongly connected classes)")

    blocks = [[sp.diags(V[:, a, b]) + (base.matrix if a == b else 0) for b in range(N)] for a in range(N)]
    matrix = sp.bmat(blocks, format='csr')
    params = {'n': int(n), 'd': int(d), 'N': N, 'V': V[0].tolist() if constant else 'field',
              'layout': 'component-major'}
    logger.debug(f"Built coupled Neumann system N={N} d={d} n={n}")
    return GridOperator(matrix, base.space.tiled(N), 'coupled', params)


def build_dtn(n, d, V=0.0):
    """Negative Dirichlet-to-Neumann map -D_V on the boundary nodes of [0, 1]^d

    Schur complement of the weighted Neumann form W(-Lap + V) onto the
    boundary, divided by the surface quadrature weights.
    """
    if d not in (2, 3):
        raise DomainError(f"DtN maps are built for d = 2 or 3, got {d}")
    full = build_laplacian(d, n, BoundaryCondition.neumann())
    m = full.side
    h = full.space.h

    potential = np.asarray(V, dtype=float)
    if potential.ndim == 0:
        potential = np.full(m, float(potential))
    elif potential.shape != (m,):
        raise DomainError(f"Potential needs one value per node ({m}), got shape {potential.shape}")
    negative_part = max(-float(potential.min()), 0.0)
    dirichlet_bound = dirichlet_min_eigenvalue(d, n - 2, h)
    if not negative_part < dirichlet_bound:
        raise ValidationError(f"||V^-||_inf = {negative_part:.6g} is not below the smallest "
                              f"Dirichlet eigenvalue {dirichlet_bound:.6g}")

    form = (sp.diags(full.space.weights) @ (sp.diags(potential) - full.matrix)).tocsr()
    boundary = full.space.boundary_nodes
    interior = np.setdiff1d(np.arange(m), boundary)

    form_ii = form[interior][:, interior].tocsc()
    form_ib = form[interior][:, boundary]
    form_bi = form[boundary][:, interior]
    form_bb = form[boundary][:, boundary]

    extension = splu(form_ii).solve(form_ib.toarray())
    schur = form_bb.toarray() - form_bi @ extension
    schur = 0.5 * (schur + schur.T)

    nb = len(boundary)
    weights = boundary_weights(full.space.nodes[boundary], h)
    space = GridSpace(dim=d - 1, nodes=full.space.nodes[boundary], weights=weights,
                      boundary_nodes=np.empty(0, dtype=int), h=h, measure=float(weights.sum()))
    params = {'n': int(n), 'd': int(d), 'V': float(potential[0]) if np.all(potential == potential[0]) else 'field'}
    logger.debug(f"Built DtN map d={d} n={n} with {nb} boundary nodes")
    return GridOperator(sp.csr_matrix(-schur / weights[:, None]), space, 'dtn', params)


def boundary_weights(nodes, h):
    """Surface quadrature on the boundary of [0, 1]^d

    Each face carries trapezoid weights along its own axes; a node on e faces
    gets e * h^(d-1) / 2^(e-1). Corners of the square get h, corners of the
    cube 3 h^2 / 4, and the weights sum to the surface area 2d.
    """
    nodes = np.asarray(nodes, dtype=float)
    extreme = np.sum((nodes <= 0.5 * h) | (nodes >= 1.0 - 0.5 * h), axis=1)
    if np.any(extreme == 0):
        raise DomainError("Boundary weights asked for an interior node")
    return extreme * 0.5 ** (extreme - 1) * h ** (nodes.shape[1] - 1)


def build_power(base, k, shift_check=True):
    """B = -(-A)^k"""
    if int(k) != k or k < 1:
        raise DomainError(f"Power must be a positive integer, got {k}")
    k = int(k)
    if shift_check:
        from .spectral import leading_eigenpair
        spb = leading_eigenpair(base).lambda0
        if spb >= 0:
            raise ValidationError(f"Spectral bound {spb:.6g} of the base operator is not negative")

    negated = (-base.matrix).tocsr()
    product = negated
    for _ in range(k - 1):
        product = (product @ negated).tocsr()
    params = {'base_family': base.family, 'base_params': base.params, 'k': k}
    return GridOperator(-product, base.space, 'power', params)


def build_from_params(family, params):
    """Dispatch a family name and a JSON parameter object to the builders"""
    params = dict(params or {})
    try:
        if family == 'rank_one':
            return build_rank_one(params['n'])
        if family == 'laplacian':
            bc = BoundaryCondition(params.get('bc', 'dirichlet'), params.get('beta'))
            return build_laplacian(params.get('d', 1), params['n'], bc)
        if family == 'coupled':
            N = params.get('N', 2)
            V = params.get('V', np.ones((N, N)) - np.eye(N))
            return build_coupled(params['n'], params.get('d', 1), N, V)
        if family == 'dtn':
            return build_dtn(params['n'], params.get('d', 2), params.get('V', 0.0))
        if family == 'power':
            base_params = dict(params['base_params'])
            if 'n' in params:
                base_params['n'] = params['n']
            base = build_from_params(params.get('base_family', 'laplacian'), base_params)
            return build_power(base, params.get('k', 1), params.get('shift_check', True))
    except KeyError as e:
        raise DomainError(f"Missing parameter {e} for family '{family}'")
    raise DomainError(f"Unknown operator family '{family}'")


def ladder_builder(family, params):
    """Return n -> operator for a mesh ladder over the given family"""
    def build(n):
        return build_from_params(family, dict(params, n=n))
    return build


def save_triplets(operator, path):
    """Write the operator in the sparse-triplet text format"""
    coo = operator.matrix.tocoo()
    with open(path, 'w') as f:
        f.write(f"# family {operator.family}\n")
        f.write(f"# params {json.dumps(operator.params, sort_keys=True)}\n")
        f.write(f"# shape {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        f.write(f"# space {json.dumps(operator.space.to_dict())}\n")
        for i, j, value in zip(coo.row, coo.col, coo.data):
            f.write(f"{int(i)} {int(j)} {float(value)!r}\n")
    logger.info(f"Saved {operator.family} operator ({coo.nnz} entries) to {path}")


def load_triplets(path):
    """Read an operator written by save_triplets"""
    header = {}
    rows, cols, values = [], [], []
    with open(path, 'r') as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                key, _, rest = line[1:].strip().partition(' ')
                header[key] = rest
                continue
            i, j, value = line.split()
            rows.append(int(i))
            cols.append(int(j))
            values.append(float(value))

    missing = {'family', 'params', 'shape', 'space'} - set(header)
    if missing:
        raise DomainError(f"Triplet file {path} lacks header lines: {', '.join(sorted(missing))}")
    n_rows, n_cols, nnz = (int(token) for token in header['shape'].split())
    if nnz != len(values):
        raise DomainError(f"Triplet file {path} declares {nnz} entries but holds {len(values)}")
    matrix = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    space = GridSpace.from_dict(json.loads(header['space']))
    return GridOperator(matrix, space, header['family'], json.loads(header['params']))
