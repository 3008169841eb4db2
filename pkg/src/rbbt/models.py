"""Benchmark generators: Stokes flow on a staggered grid and a constrained triple chain."""

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sps

from rbbt.param_system import AffineMatrixOperator
from rbbt.projectors import MechanicalStructure, StokesStructure
from rbbt.theta import AffineShift, Coordinate, One


@dataclass
class StokesConfig:
    """Stokes flow in the unit square, discretized on an ``nx`` by ``ny`` cell MAC grid.

    ``variant`` is ``'proper_only'`` (no feedthrough from the pressure) or
    ``'improper_variant'`` with ``B2 = e_q`` and ``C2 = e_1^T + e_q^T``.
    ``parametric_input`` scales the force as ``(1 + mu) B1``.
    """

    nx: int = 5
    ny: int = 6
    param_box: tuple = ((0.5, 1.5),)
    variant: str = 'proper_only'
    parametric_input: bool = False

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError('grid resolution must be at least 2 per axis')
        box = np.asarray(self.param_box, dtype=float).reshape(-1, 2)
        if box.shape[0] != 1 or box[0, 0] <= 0 or box[0, 1] < box[0, 0]:
            raise ValueError('viscosity box must be a positive interval')
        if self.variant not in ('proper_only', 'improper_variant'):
            raise ValueError(f'unknown Stokes variant {self.variant!r}')

    def to_dict(self):
        d = asdict(self)
        d['param_box'] = [list(map(float, r)) for r in np.asarray(self.param_box).reshape(-1, 2)]
        return d


def _second_difference(n, h, dirichlet_on_nodes):
    """1D second difference with homogeneous Dirichlet data.

    ``dirichlet_on_nodes``: unknowns sit at interior nodes (walls at the
    neighbours); otherwise unknowns sit at cell centers and the wall value is
    imposed by a reflected ghost value.
    """
    main = -2.0 * np.ones(n)
    if not dirichlet_on_nodes:
        main[0] = main[-1] = -3.0
    off = np.ones(n - 1)
    return sps.diags([off, main, off], [-1, 0, 1], format='csc') / h ** 2


def stokes_matrices(nx, ny):
    """Velocity Laplacian ``L``, gradient-type coupling ``G`` and grid metadata.

    Unknown ordering: horizontal velocity on interior vertical faces
    (``(nx-1) * ny``), vertical velocity on interior horizontal faces
    (``nx * (ny-1)``), then cell pressures with the last one removed.
    """
    hx, hy = 1.0 / nx, 1.0 / ny
    Ix_u, Iy_u = sps.identity(nx - 1), sps.identity(ny)
    Ix_v, Iy_v = sps.identity(nx), sps.identity(ny - 1)
    # u(i, j): i along x (faces 1..nx-1), j along y (cells); index j * (nx - 1) + i
    Lu = sps.kron(Iy_u, _second_difference(nx - 1, hx, True)) + \
        sps.kron(_second_difference(ny, hy, False), Ix_u)
    Lv = sps.kron(Iy_v, _second_difference(nx, hx, False)) + \
        sps.kron(_second_difference(ny - 1, hy, True), Ix_v)
    L = sps.block_diag([Lu, Lv], format='csc')
    # divergence of cell (i, j): (u_{i+1/2} - u_{i-1/2}) / hx + (v_{j+1/2} - v_{j-1/2}) / hy
    Dx1 = sps.diags([np.ones(nx - 1), -np.ones(nx - 1)], [0, -1], shape=(nx, nx - 1)) / hx
    Dy1 = sps.diags([np.ones(ny - 1), -np.ones(ny - 1)], [0, -1], shape=(ny, ny - 1)) / hy
    div = sps.hstack([sps.kron(sps.identity(ny), Dx1), sps.kron(Dy1, sps.identity(nx))]).tocsc()
    # G = -grad = div^T, last pressure dropped to remove the constant mode
    G = div.T.tocsc()[:, :nx * ny - 1]
    n_u = (nx - 1) * ny
    xs_u = np.tile(np.arange(1, nx) * hx, ny)
    ys_u = np.repeat((np.arange(ny) + 0.5) * hy, nx - 1)
    return L, G, {'n_u': n_u, 'n_v': nx * (ny - 1), 'xs_u': xs_u, 'ys_u': ys_u}


def make_stokes(cfg=None):
    """Build the parametric Stokes system ``E x' = mu L x + G p + B1 u``, ``0 = G^T x + B2 u``.

    The force acts on the horizontal velocity in the lower left quarter; the
    output averages the horizontal velocity in the upper right quarter.

    Returns
    -------
    (ParametricDaeSystem, StokesStructure)
    """
    cfg = cfg or StokesConfig()
    L, G, grid = stokes_matrices(cfg.nx, cfg.ny)
    n, q = L.shape[0], G.shape[1]
    xs, ys = grid['xs_u'], grid['ys_u']
    n_u = grid['n_u']
    force = np.zeros(n)
    force[:n_u] = ((xs <= 0.5) & (ys <= 0.5)).astype(float)
    probe = np.zeros(n)
    region = (xs >= 0.5) & (ys >= 0.5)
    probe[:n_u] = region / max(region.sum(), 1)
    if force.sum() == 0 or probe.sum() == 0:
        raise ValueError('grid too coarse for the input/output regions')
    B1 = sps.csc_matrix(force.reshape(-1, 1))
    C1 = sps.csc_matrix(probe.reshape(1, -1))
    zero = sps.csc_matrix((n, n))
    E_op = AffineMatrixOperator.constant(sps.identity(n, format='csc'))
    A_op = AffineMatrixOperator([(One(), zero), (Coordinate(0), L)])
    if cfg.parametric_input:
        B1_op = AffineMatrixOperator([(One(), sps.csc_matrix((n, 1))), (AffineShift(1.0, Coordinate(0)), B1)])
    else:
        B1_op = AffineMatrixOperator.constant(B1)
    B2 = np.zeros((q, 1))
    C2 = np.zeros((1, q))
    meta = {'generator': 'stokes', 'config': cfg.to_dict(), 'n': n, 'q': q}
    if cfg.variant == 'improper_variant':
        B2[-1, 0] = 1.0
        C2[0, 0] = C2[0, -1] = 1.0
        meta.update(B2_index=[q - 1], C2_indices=[0, q - 1])
    structure = StokesStructure(E_op, A_op, AffineMatrixOperator.constant(G),
                                B1_op, AffineMatrixOperator.constant(sps.csc_matrix(B2)),
                                AffineMatrixOperator.constant(C1), AffineMatrixOperator.constant(sps.csc_matrix(C2)),
                                np.asarray(cfg.param_box, dtype=float).reshape(-1, 2),
                                name=f'stokes_{cfg.nx}x{cfg.ny}_{cfg.variant}', metadata=meta)
    return structure.to_system(), structure


@dataclass
class TripleChainConfig:
    """Three chains of ``ell`` masses joined by one extra mass, with a rigid constraint.

    ``masses`` and ``stiffnesses`` are ``(m1, m2, m3, m0)`` and ``(k1, k2, k3, k0)``;
    internal damping is ``alpha M + beta K``.
    """

    ell: int = 20
    masses: tuple = (1.0, 1.0, 1.0, 1.0)
    stiffnesses: tuple = (1.0, 1.0, 1.0, 1.0)
    alpha: float = 0.01
    beta: float = 0.02
    param_box: tuple = ((0.1, 1.0), (0.1, 1.0), (0.1, 1.0))
    input_index: int = None

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError('chain length must be positive')
        if min(self.masses) <= 0 or min(self.stiffnesses) <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError('physical parameters must be positive')
        if len(self.masses) != 4 or len(self.stiffnesses) != 4:
            raise ValueError('need four masses and four stiffnesses')
        if np.asarray(self.param_box).reshape(-1, 2).shape[0] != 3:
            raise ValueError('the damping box is three-dimensional')

    @property
    def n(self):
        return 3 * self.ell + 1

    def resolved_input_index(self):
        # row 450 of 601 (1-based) in the reference configuration, scaled proportionally
        if self.input_index is not None:
            return int(self.input_index)
        return min(max(int(round(450 / 601 * self.n)) - 1, 0), self.n - 1)

    def to_dict(self):
        d = asdict(self)
        d['param_box'] = [list(map(float, r)) for r in np.asarray(self.param_box).reshape(-1, 2)]
        d['input_index'] = self.resolved_input_index()
        return d


def triple_chain_matrices(cfg):
    """``M``, ``K``, ``D_int``, selector matrices ``F1..F4``, ``G`` and ``Bx``."""
    ell, n = cfg.ell, cfg.n
    m1, m2, m3, m0 = cfg.masses
    k1, k2, k3, k0 = cfg.stiffnesses
    M = sps.diags(np.concatenate([np.full(ell, m1), np.full(ell, m2), np.full(ell, m3), [m0]]), format='csc')
    K = sps.lil_matrix((n, n))
    tri = sps.diags([-np.ones(ell - 1), 2 * np.ones(ell), -np.ones(ell - 1)], [-1, 0, 1]).toarray()
    for i, k in enumerate((k1, k2, k3)):
        sl = slice(i * ell, (i + 1) * ell)
        K[sl, sl] = k * tri
        K[(i + 1) * ell - 1, n - 1] = k
        K[n - 1, (i + 1) * ell - 1] = k
    K[n - 1, n - 1] = k1 + k2 + k3 + k0
    K = K.tocsc()
    D_int = (cfg.alpha * M + cfg.beta * K).tocsc()
    F = []
    for i in range(3):
        d = np.zeros(n)
        d[i * ell:(i + 1) * ell] = 1.0
        F.append(sps.diags(d, format='csc'))
    d = np.zeros(n)
    d[-1] = 1.0
    F.append(sps.diags(d, format='csc'))
    G = sps.lil_matrix((n, 1))
    G[0, 0] = 1.0
    G[n - 1, 0] = -1.0
    Bx = sps.lil_matrix((n, 1))
    Bx[cfg.resolved_input_index(), 0] = 1.0
    return M, K, D_int, F, G.tocsc(), Bx.tocsc()


def make_triple_chain(cfg=None):
    """Constrained triple chain with damping ``D(mu) = D_int + mu1 F1 + mu2 F2 + mu3 F3 + F4``.

    Returns
    -------
    (ParametricDaeSystem, MechanicalStructure)
        The system is the first-order index-3 form with state ``(x, x', lam)``.
    """
    cfg = cfg or TripleChainConfig()
    M, K, D_int, F, G, Bx = triple_chain_matrices(cfg)
    D_op = AffineMatrixOperator([(One(), (D_int + F[3]).tocsc())] +
                                [(Coordinate(i), F[i]) for i in range(3)])
    meta = {'generator': 'triple_chain', 'config': cfg.to_dict(), 'n': cfg.n}
    mech = MechanicalStructure(AffineMatrixOperator.constant(M), D_op, AffineMatrixOperator.constant(K),
                               AffineMatrixOperator.constant(G), AffineMatrixOperator.constant(Bx),
                               AffineMatrixOperator.constant(Bx.T.tocsc()),
                               np.asarray(cfg.param_box, dtype=float).reshape(-1, 2),
                               name=f'triple_chain_{cfg.ell}', metadata=meta)
    return mech.to_system(), mech
