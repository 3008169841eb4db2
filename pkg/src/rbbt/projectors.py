"""Structured spectral projectors and the strictly dissipative mechanical transform.

For saddle-point pencils

    E = [[E11, 0], [0, 0]],   A = [[A11, G], [G^T, 0]]

with symmetric positive definite ``E11`` the spectral projectors onto the
finite deflating subspaces are available in closed form in terms of the
oblique projector ``Pi = I - G (G^T E11^{-1} G)^{-1} G^T E11^{-1}``. They are
applied implicitly with one sparse solve with ``E11`` and one solve with the
small Schur complement.
"""

from dataclasses import dataclass, field
from itertools import product as cartesian
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from rbbt.dense import dense_projectors
from rbbt.errors import (BoundError, DefinitenessError, DissipativityError, ShapeError,
                         StructureError)
from rbbt.param_system import (AffineMatrixOperator, GeneralSmall, Mechanical, ParametricDaeSystem,
                               StokesLike)
from rbbt.theta import One, Product, ThetaExpr

PROJECTOR_TOL = 1e-10
DENSE_CHOLESKY_MAX = 5000
SCHUR_RANK_TOL = 1e-13
PHI_MAX_SIZE = 2000


def assemble_blocks(row_sizes, col_sizes, entries):
    """Assemble an affine operator from affine blocks.

    ``entries`` maps ``(i, j)`` to an :class:`AffineMatrixOperator`. Terms
    with equal coefficient expressions are merged, so the result has one
    constant term plus one term per distinct parametric coefficient.
    """
    roff = np.concatenate([[0], np.cumsum(row_sizes)]).astype(int)
    coff = np.concatenate([[0], np.cumsum(col_sizes)]).astype(int)
    shape = (int(roff[-1]), int(coff[-1]))
    merged = [(One(), sps.lil_matrix(shape))]
    for (i, j), op in entries.items():
        if op is None:
            continue
        if op.shape != (row_sizes[i], col_sizes[j]):
            raise ShapeError(f'block ({i}, {j}) has shape {op.shape}, expected {(row_sizes[i], col_sizes[j])}')
        for theta, mat in op.terms:
            if theta.is_one():
                slot = 0
            else:
                slot = next((k for k, (t, _) in enumerate(merged) if k > 0 and t == theta), None)
                if slot is None:
                    merged.append((theta, sps.lil_matrix(shape)))
                    slot = len(merged) - 1
            merged[slot][1][roff[i]:roff[i + 1], coff[j]:coff[j + 1]] = \
                merged[slot][1][roff[i]:roff[i + 1], coff[j]:coff[j + 1]] + mat
    return AffineMatrixOperator([(t, sps.csc_matrix(m)) for t, m in merged])


def scale_by_theta(op, theta):
    """Multiply every term of ``op`` by the coefficient ``theta``."""
    terms = [(theta if t.is_one() else Product((theta, t)), m) for t, m in op.terms]
    return AffineMatrixOperator([(One(), sps.csc_matrix(op.shape))] + terms)


def _zero_op(rows, cols):
    return AffineMatrixOperator.constant(sps.csc_matrix((rows, cols)))


@dataclass
class StokesStructure:
    """Blocks of a saddle-point system ``E x' = A x + G lam + B1 u, 0 = G^T x + B2 u``.

    The output is ``y = C1 x + C2 lam``.
    """

    E: AffineMatrixOperator
    A: AffineMatrixOperator
    G: AffineMatrixOperator
    B1: AffineMatrixOperator
    B2: AffineMatrixOperator
    C1: AffineMatrixOperator
    C2: AffineMatrixOperator
    param_box: np.ndarray
    name: str = 'stokes'
    metadata: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def q(self):
        return self.G.shape[1]

    def to_system(self):
        n, q = self.n, self.q
        m, p = self.B1.shape[1], self.C1.shape[0]
        E = assemble_blocks([n, q], [n, q], {(0, 0): self.E})
        A = assemble_blocks([n, q], [n, q], {(0, 0): self.A, (0, 1): self.G, (1, 0): self.G.transpose()})
        B = assemble_blocks([n, q], [m], {(0, 0): self.B1, (1, 0): self.B2})
        C = assemble_blocks([p], [n, q], {(0, 0): self.C1, (0, 1): self.C2})
        improper = self.B2.terms[0][1].nnz + sum(t[1].nnz for t in self.B2.terms[1:]) > 0 or \
            self.C2.terms[0][1].nnz + sum(t[1].nnz for t in self.C2.terms[1:]) > 0
        return ParametricDaeSystem(E, A, B, C, self.param_box, StokesLike(n, q), index=2,
                                   name=self.name, metadata=dict(self.metadata, improper=bool(improper)))


@dataclass
class MechanicalStructure:
    """Constrained second-order system ``M x'' + D x' + K x = G lam + Bx u, G^T x = 0``."""

    M: AffineMatrixOperator
    D: AffineMatrixOperator
    K: AffineMatrixOperator
    G: AffineMatrixOperator
    Bx: AffineMatrixOperator
    Cx: AffineMatrixOperator
    param_box: np.ndarray
    name: str = 'mechanical'
    metadata: dict = field(default_factory=dict)

    @property
    def n_x(self):
        return self.M.shape[0]

    @property
    def q(self):
        return self.G.shape[1]

    def to_system(self):
        """First-order index-3 form with state ``(x, x', lam)``."""
        nx, q = self.n_x, self.q
        m, p = self.Bx.shape[1], self.Cx.shape[0]
        ident = AffineMatrixOperator.constant(sps.identity(nx, format='csc'))
        E = assemble_blocks([nx, nx, q], [nx, nx, q], {(0, 0): ident, (1, 1): self.M})
        A = assemble_blocks([nx, nx, q], [nx, nx, q],
                            {(0, 1): ident, (1, 0): self.K.scaled(-1.0), (1, 1): self.D.scaled(-1.0),
                             (1, 2): self.G, (2, 0): self.G.transpose()})
        B = assemble_blocks([nx, nx, q], [m], {(1, 0): self.Bx})
        C = assemble_blocks([p], [nx, nx, q], {(0, 0): self.Cx})
        return ParametricDaeSystem(E, A, B, C, self.param_box, Mechanical(nx, q), index=3,
                                   name=self.name, metadata=dict(self.metadata))


class ProjectorContext:
    """Applies the spectral projectors of a pencil evaluated at one parameter."""

    N = 0
    mu = None

    def apply_pi_left(self, X):
        raise NotImplementedError

    def apply_pi_right(self, X):
        raise NotImplementedError

    def dual(self):
        """Context of the transposed pencil: left and right roles swap and transpose."""
        raise NotImplementedError

    def _check_shape(self, X):
        X = np.asarray(X)
        vec = X.ndim == 1
        X2 = X.reshape(-1, 1) if vec else X
        if X2.shape[0] != self.N:
            raise ShapeError(f'expected {self.N} rows, got {X2.shape[0]}')
        return X2, vec

    def verify(self, E, A, rng=0, count=2):
        """Check idempotency and commutation with the pencil on random vectors."""
        rng = np.random.default_rng(rng)
        V = rng.standard_normal((self.N, count))
        for apply in (self.apply_pi_left, self.apply_pi_right):
            PV = apply(V)
            defect = np.linalg.norm(apply(PV) - PV)
            if defect > PROJECTOR_TOL * max(np.linalg.norm(V), np.linalg.norm(PV)):
                raise StructureError(f'projector is not idempotent (defect {defect:.2e})')
        for M in (E, A):
            lhs = self.apply_pi_left(M @ V)
            rhs = M @ self.apply_pi_right(V)
            scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), spsla.norm(M) * np.linalg.norm(V))
            if np.linalg.norm(lhs - rhs) > PROJECTOR_TOL * scale:
                raise StructureError('projectors do not commute with the pencil')


class SaddlePointProjectors(ProjectorContext):
    """Implicit projectors for ``E = [[E11, 0], [0, 0]]``, ``A = [[A11, G], [G^T, 0]]``.

    With ``S = G^T E11^{-1} G`` and ``Pi = I - G S^{-1} G^T E11^{-1}``::

        Pi_l = [[Pi, -Pi A11 E11^{-1} G S^{-1}], [0, 0]]
        Pi_r = [[Pi^T, 0], [-S^{-1} G^T E11^{-1} A11 Pi^T, 0]]

    For symmetric ``A11`` this gives ``Pi_r = Pi_l^T``.
    """

    def __init__(self, E11, A11, G, mu=None, check_definite=True, _factors=None):
        self.E11 = sps.csc_matrix(E11)
        self.A11 = sps.csc_matrix(A11)
        self.G = sps.csc_matrix(G)
        self.n, self.q = self.G.shape
        self.N = self.n + self.q
        self.mu = mu
        if _factors is not None:
            self._E_lu, self._EinvG, self._S_cho = _factors
            return
        if spsla.norm(self.E11 - self.E11.T) > 1e-12 * max(spsla.norm(self.E11), 1.0):
            raise StructureError('the differential block of E must be symmetric')
        if check_definite and self.n <= DENSE_CHOLESKY_MAX:
            try:
                np.linalg.cholesky(self.E11.toarray())
            except np.linalg.LinAlgError as exc:
                raise DefinitenessError('E11 is not positive definite') from exc
        try:
            self._E_lu = spsla.splu(self.E11)
        except RuntimeError as exc:
            raise DefinitenessError('E11 is singular') from exc
        if self.q:
            self._EinvG = self._E_lu.solve(self.G.toarray())
            S = self.G.T @ self._EinvG
            try:
                self._S_cho = spla.cho_factor(0.5 * (S + S.T))
            except np.linalg.LinAlgError as exc:
                raise DefinitenessError('Schur complement G^T E11^{-1} G is not positive definite; '
                                        'G is rank deficient') from exc
            # rounding can let Cholesky pass on a singular S; check the pivots
            piv = np.abs(np.diag(self._S_cho[0])) ** 2
            if piv.min() <= SCHUR_RANK_TOL * piv.max():
                raise DefinitenessError('Schur complement G^T E11^{-1} G is numerically singular; '
                                        'G is rank deficient')
        else:
            self._EinvG = np.zeros((self.n, 0))
            self._S_cho = None

    def _Sinv(self, Y):
        return spla.cho_solve(self._S_cho, Y) if self.q else Y

    def apply_pi(self, X):
        """``Pi X = X - G S^{-1} G^T E11^{-1} X``."""
        if not self.q:
            return X.copy()
        return X - self.G @ self._Sinv(self._EinvG.T @ X)

    def apply_pi_t(self, X):
        """``Pi^T X = X - E11^{-1} G S^{-1} G^T X``."""
        if not self.q:
            return X.copy()
        return X - self._EinvG @ self._Sinv(self.G.T @ X)

    def apply_pi_left(self, X):
        X, vec = self._check_shape(X)
        x, lam = X[:self.n], X[self.n:]
        if self.q:
            x = x - self.A11 @ (self._EinvG @ self._Sinv(lam))
        out = np.zeros_like(X, dtype=np.result_type(X, float))
        out[:self.n] = self.apply_pi(x)
        return out.ravel() if vec else out

    def apply_pi_right(self, X):
        X, vec = self._check_shape(X)
        out = np.zeros_like(X, dtype=np.result_type(X, float))
        xp = self.apply_pi_t(X[:self.n])
        out[:self.n] = xp
        if self.q:
            out[self.n:] = -self._Sinv(self._EinvG.T @ (self.A11 @ xp))
        return out.ravel() if vec else out

    def dual(self):
        return SaddlePointProjectors(self.E11, self.A11.T, self.G, self.mu,
                                     _factors=(self._E_lu, self._EinvG, self._S_cho))

    def schur_solve(self, Y):
        return self._Sinv(Y)

    def solve_E11(self, Y):
        return self._E_lu.solve(np.asarray(Y, dtype=float))

    def dense_pi(self):
        return self.apply_pi(np.eye(self.n))


class DenseProjectors(ProjectorContext):
    """Explicit projector matrices, for small unstructured pencils."""

    def __init__(self, Pi_l, Pi_r, mu=None):
        self.Pi_l = np.asarray(Pi_l)
        self.Pi_r = np.asarray(Pi_r)
        self.N = self.Pi_l.shape[0]
        self.mu = mu

    def apply_pi_left(self, X):
        X, vec = self._check_shape(X)
        out = self.Pi_l @ X
        return out.ravel() if vec else out

    def apply_pi_right(self, X):
        X, vec = self._check_shape(X)
        out = self.Pi_r @ X
        return out.ravel() if vec else out

    def dual(self):
        return DenseProjectors(self.Pi_r.T, self.Pi_l.T, self.mu)


def build_projector_context(inst, verify=True):
    """Build the projector context for a system evaluated at one parameter.

    Saddle-point systems get the implicit closed-form projectors; other
    kinds fall back to a dense quasi-Weierstrass decomposition (small N only).

    Parameters
    ----------
    inst
        A :class:`~rbbt.param_system.DaeInstance`.
    verify
        Check idempotency and commutation on random vectors and raise on failure.
    """
    kind = inst.kind
    if isinstance(kind, StokesLike):
        n = kind.n
        E11 = inst.E[:n, :n]
        A11 = inst.A[:n, :n]
        G = inst.A[:n, n:]
        G2 = inst.A[n:, :n]
        if spsla.norm(inst.E[n:, :]) + spsla.norm(inst.E[:n, n:]) > 0:
            raise StructureError('E must vanish outside the differential block')
        if spsla.norm(inst.A[n:, n:]) > 0 or spsla.norm(G2 - G.T) > 1e-12 * max(spsla.norm(G), 1.0):
            raise StructureError('A must have the saddle-point layout [[A11, G], [G^T, 0]]')
        ctx = SaddlePointProjectors(E11, A11, G, inst.mu)
    else:
        Pi_l, Pi_r, _ = dense_projectors(inst.E, inst.A)
        ctx = DenseProjectors(Pi_l, Pi_r, inst.mu)
    if verify:
        ctx.verify(inst.E, inst.A)
    return ctx


def apply_pi_left(ctx, X):
    return ctx.apply_pi_left(X)


def apply_pi_right(ctx, X):
    return ctx.apply_pi_right(X)


@dataclass
class PhiFactorization:
    """``Pi = Xi_l Xi_r^T`` and ``Pi_l = Phi_l Phi_r^T`` (dense, small systems only)."""

    Xi_l: np.ndarray
    Xi_r: np.ndarray
    Phi_l: np.ndarray
    Phi_r: np.ndarray


def phi_factorization(ctx):
    """Factor the oblique projector by a singular value decomposition.

    ``Xi_l`` has orthonormal columns spanning range(Pi) and ``Xi_r = V_1 Sigma_1``
    so that ``Xi_r^T Xi_l = I``; for an orthogonal ``Pi`` both coincide. The
    lower block of ``Phi_r`` is ``-S^{-1} G^T E11^{-1} A11^T Xi_r``, which makes
    ``Phi_l Phi_r^T`` equal to the left projector.
    """
    if not isinstance(ctx, SaddlePointProjectors):
        raise StructureError('factorization requires a saddle-point projector context')
    if ctx.N > PHI_MAX_SIZE:
        raise ShapeError(f'dense factorization limited to N <= {PHI_MAX_SIZE}')
    Pi = ctx.dense_pi()
    U, s, Vt = np.linalg.svd(Pi)
    nf = ctx.n - ctx.q
    Xi_l = U[:, :nf]
    Xi_r = Vt[:nf].T * s[:nf]
    lower = -ctx.schur_solve(ctx._EinvG.T @ (ctx.A11.T @ Xi_r)) if ctx.q else np.zeros((0, nf))
    Phi_l = np.vstack([Xi_l, np.zeros((ctx.q, nf))])
    Phi_r = np.vstack([Xi_r, lower])
    return PhiFactorization(Xi_l, Xi_r, Phi_l, Phi_r)


def _extreme_eigs(mat):
    M = mat.toarray() if sps.issparse(mat) else np.asarray(mat)
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return w[0], w[-1]


@dataclass
class GammaCache:
    """Extremal eigenvalues of every affine term of M, D and K."""

    M: list
    D: list
    K: list


def gamma_cache(mech):
    def terms(op, name):
        out = []
        for k, (theta, mat) in enumerate(op.terms):
            lo, hi = _extreme_eigs(mat)
            if k >= 1 and lo < -1e-12 * max(abs(hi), 1.0):
                raise DefinitenessError(f'term {k} of {name} is not positive semidefinite')
            out.append((lo, hi))
        return out
    return GammaCache(terms(mech.M, 'M'), terms(mech.D, 'D'), terms(mech.K, 'K'))


def gamma_exact(M, D, K):
    """``lambda_min(D) / (lambda_max(M) + lambda_max(D)^2 lambda_max(K^{-1}) / 4)``."""
    mlo, mhi = _extreme_eigs(M)
    dlo, dhi = _extreme_eigs(D)
    klo, khi = _extreme_eigs(K)
    if min(mlo, dlo, klo) <= 0:
        raise DefinitenessError('M, D and K must be positive definite')
    return dlo / (mhi + 0.25 * dhi ** 2 / klo)


def gamma_bound(mech, mu, mode='exact', cache=None):
    """Admissible ``gamma(mu)`` for the strictly dissipative transform.

    Parameters
    ----------
    mech
        :class:`MechanicalStructure`.
    mu
        Parameter value.
    mode
        ``'exact'`` uses eigenvalues of M(mu), D(mu), K(mu); ``'theta'`` uses
        the cheaper lower estimate from precomputed eigenvalues of the affine
        terms.
    cache
        Optional :class:`GammaCache` for the ``'theta'`` mode.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mode == 'exact':
        return gamma_exact(mech.M.evaluate(mu), mech.D.evaluate(mu), mech.K.evaluate(mu))
    if mode != 'theta':
        raise ValueError(f'unknown gamma mode {mode!r}')
    cache = cache or gamma_cache(mech)
    tM, tD, tK = mech.M.thetas(mu), mech.D.thetas(mu), mech.K.thetas(mu)
    if min(tM.min(), tD.min(), tK.min()) < 0:
        raise BoundError('coefficient estimate requires nonnegative coefficients')
    d_min = sum(t * lo for t, (lo, _) in zip(tD, cache.D))
    d_max = sum(t * hi for t, (_, hi) in zip(tD, cache.D))
    m_max = sum(t * hi for t, (_, hi) in zip(tM, cache.M))
    k_min = sum(t * lo for t, (lo, _) in zip(tK, cache.K))
    if d_min <= 0 or k_min <= 0:
        raise DefinitenessError('coefficient estimate of lambda_min(D) or lambda_min(K) is not positive')
    return d_min / (m_max + 0.25 * d_max ** 2 / k_min)


def parameter_grid(param_box, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in np.asarray(param_box).reshape(-1, 2)]
    return [np.array(p) for p in cartesian(*axes)]


def first_order_sd_realization(mech, gamma_mode='constant_over_D', gamma=None, grid_per_axis=10,
                               safety=0.95, check_params=None):
    """Strictly dissipative first-order realization of a constrained mechanical system.

    Returns a :class:`StokesStructure` with::

        E = [[K, g M], [g M, M]],  A = [[-g K, K - g D], [-K, -D + g M]],
        B = [g Bx; Bx],  constraint blkdiag(g G, G),  C = [Cx, 0].

    Parameters
    ----------
    mech
        :class:`MechanicalStructure`.
    gamma_mode
        ``'constant_over_D'`` (default) takes ``g = safety * min`` of the
        coefficient estimate over a parameter grid, keeping the system affine;
        ``'per_parameter'`` uses ``g(mu) = safety * gamma_bound(mu, 'theta')``.
    gamma
        Explicit constant value; overrides ``gamma_mode``.
    check_params
        Parameters at which strict dissipativity is verified; default the
        corners and center of the box.
    """
    nx, q = mech.n_x, mech.q
    cache = gamma_cache(mech)
    if gamma is not None:
        g_const = float(gamma)
        gamma_mode = 'constant_over_D'
    elif gamma_mode == 'constant_over_D':
        g_const = safety * min(gamma_bound(mech, mu, 'theta', cache)
                               for mu in parameter_grid(mech.param_box, grid_per_axis))
    elif gamma_mode == 'per_parameter':
        g_const = None
    else:
        raise ValueError(f'unknown gamma mode {gamma_mode!r}')
    if g_const is not None and g_const <= 0:
        raise DissipativityError('gamma must be positive')

    if g_const is not None:
        def gscale(op):
            return op.scaled(g_const)
        gamma_meta = g_const
    else:
        from rbbt.theta import Callback
        gtheta = Callback(lambda mu: safety * gamma_bound(mech, mu, 'theta', cache), 'gamma')

        def gscale(op):
            return scale_by_theta(op, gtheta)
        gamma_meta = 'per_parameter'

    M, D, K = mech.M, mech.D, mech.K
    E = assemble_blocks([nx, nx], [nx, nx], {(0, 0): K, (0, 1): gscale(M), (1, 0): gscale(M), (1, 1): M})
    A = assemble_blocks([nx, nx], [nx, nx],
                        {(0, 0): gscale(K).scaled(-1.0),
                         (0, 1): _sum_ops(K, gscale(D).scaled(-1.0)),
                         (1, 0): K.scaled(-1.0),
                         (1, 1): _sum_ops(D.scaled(-1.0), gscale(M))})
    G = assemble_blocks([nx, nx], [q, q], {(0, 0): gscale(mech.G), (1, 1): mech.G})
    B1 = assemble_blocks([nx, nx], [mech.Bx.shape[1]], {(0, 0): gscale(mech.Bx), (1, 0): mech.Bx})
    C1 = assemble_blocks([mech.Cx.shape[0]], [nx, nx], {(0, 0): mech.Cx})
    m, p = mech.Bx.shape[1], mech.Cx.shape[0]
    structure = StokesStructure(E, A, G, B1, _zero_op(2 * q, m), C1, _zero_op(p, 2 * q),
                                mech.param_box, name=mech.name + '_sd',
                                metadata=dict(mech.metadata, gamma=gamma_meta))
    if check_params is None:
        box = np.asarray(mech.param_box).reshape(-1, 2)
        check_params = parameter_grid(box, 2) + [box.mean(axis=1)]
    for mu in check_params:
        check_strictly_dissipative(structure.E.evaluate(mu), structure.A.evaluate(mu), mu)
    return structure


def _sum_ops(a, b):
    return assemble_blocks([a.shape[0]], [a.shape[1]], {(0, 0): a}) if b is None else \
        _add(a, b)


def _add(a, b):
    terms = list(a.terms)
    for theta, mat in b.terms:
        for k, (t, m) in enumerate(terms):
            if t == theta:
                terms[k] = (t, m + mat)
                break
        else:
            terms.append((theta, mat))
    return AffineMatrixOperator(terms)


def check_strictly_dissipative(E, A, mu=None):
    """Raise unless ``E`` is symmetric positive definite and ``(A + A^T)/2`` negative definite."""
    Ed = E.toarray() if sps.issparse(E) else np.asarray(E)
    Ad = A.toarray() if sps.issparse(A) else np.asarray(A)
    if np.linalg.norm(Ed - Ed.T) > 1e-12 * max(np.linalg.norm(Ed), 1.0):
        raise DissipativityError(f'E is not symmetric at mu = {mu}')
    try:
        np.linalg.cholesky(Ed)
    except np.linalg.LinAlgError as exc:
        raise DissipativityError(f'E is not positive definite at mu = {mu}') from exc
    lam = np.linalg.eigvalsh(0.5 * (Ad + Ad.T))[-1]
    if lam >= 0:
        raise DissipativityError(f'symmetric part of A has eigenvalue {lam:.3e} >= 0 at mu = {mu}')
    return lam


@dataclass
class AlphaCache:
    """Reference data for :func:`alpha_lower_bound`.

    ``ratio_valid`` records whether every coefficient-weighted term of E and
    of -A^S is positive semidefinite at the reference parameter, which the
    coefficient-ratio estimate requires.
    """

    mu_ref: np.ndarray
    lam_E: float
    lam_A: float
    E_terms: list
    A_terms: list
    ratio_valid: bool
    # (lambda_min, lambda_max) of each E term and of each -A^S term
    E_spectra: list
    A_spectra: list


def _differential_terms(op, n):
    return [(theta, mat[:n, :n]) for theta, mat in op.terms]


def alpha_cache(sys, mu_ref=None):
    """Precompute ``lambda_min(E(mu_ref))`` and ``lambda_min(-A^S(mu_ref))``.

    The reference parameter defaults to the midpoint of the parameter box.
    """
    if not isinstance(sys.kind, StokesLike):
        raise StructureError('the dissipativity bound needs a saddle-point system')
    n = sys.kind.n
    mu_ref = sys.box_midpoint if mu_ref is None else np.atleast_1d(np.asarray(mu_ref, dtype=float))
    E_terms = [(t, m) for t, m in _differential_terms(sys.E, n) if m.nnz]
    A_terms = [(t, m) for t, m in _differential_terms(sys.A, n) if m.nnz]
    E_ref = sum(t(mu_ref) * m for t, m in E_terms).toarray()
    A_ref = sum(t(mu_ref) * m for t, m in A_terms).toarray()
    lam_E = np.linalg.eigvalsh(E_ref)[0]
    lam_A = np.linalg.eigvalsh(-0.5 * (A_ref + A_ref.T))[0]
    if lam_E <= 0 or lam_A <= 0:
        raise DefinitenessError('pencil is not strictly dissipative at the reference parameter')
    E_spectra = [_extreme_eigs(m) for _, m in E_terms]
    A_spectra = [_extreme_eigs(-0.5 * (m + m.T)) for _, m in A_terms]
    valid = True
    for terms, spectra in ((E_terms, E_spectra), (A_terms, A_spectra)):
        for (t, _), (lo, hi) in zip(terms, spectra):
            c = t(mu_ref)
            if c <= 0 or lo < -1e-12 * max(abs(hi), 1.0):
                valid = False
    return AlphaCache(mu_ref, lam_E, lam_A, E_terms, A_terms, valid, E_spectra, A_spectra)


def alpha_lower_bound(sys, mu, cache=None, mu_ref=None):
    """Lower bound ``alpha(mu)`` of the smallest singular value of the projected Lyapunov operator.

    ``alpha(mu) = 2 min_k(theta^E_k(mu)/theta^E_k(mu_ref)) lambda_min(E(mu_ref))
    * min_k(theta^A_k(mu)/theta^A_k(mu_ref)) lambda_min(-A^S(mu_ref))``,
    where the minima run over terms with a nonzero differential block.

    If the affine terms are not individually semidefinite, the ratio estimate
    is not valid; a Weyl perturbation bound around the reference point is used
    instead, and if that is not positive either, the eigenvalues at ``mu`` are
    computed directly.
    """
    cache = cache or alpha_cache(sys, mu_ref)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if cache.ratio_valid:
        rE = [t(mu) / t(cache.mu_ref) for t, _ in cache.E_terms]
        rA = [t(mu) / t(cache.mu_ref) for t, _ in cache.A_terms]
        if min(rE) <= 0 or min(rA) <= 0:
            raise BoundError(f'coefficient ratio is not positive at mu = {mu.tolist()}')
        return 2.0 * min(rE) * cache.lam_E * min(rA) * cache.lam_A

    def weyl(terms, spectra, lam_ref):
        value = lam_ref
        for (t, _), (lo, hi) in zip(terms, spectra):
            delta = t(mu) - t(cache.mu_ref)
            value += delta * (lo if delta >= 0 else hi)
        return value
    lam_E = weyl(cache.E_terms, cache.E_spectra, cache.lam_E)
    lam_A = weyl(cache.A_terms, cache.A_spectra, cache.lam_A)
    if lam_E <= 0 or lam_A <= 0:
        Emu = sum(t(mu) * m for t, m in cache.E_terms).toarray()
        Amu = sum(t(mu) * m for t, m in cache.A_terms).toarray()
        lam_E = np.linalg.eigvalsh(Emu)[0]
        lam_A = np.linalg.eigvalsh(-0.5 * (Amu + Amu.T))[0]
        if lam_E <= 0 or lam_A <= 0:
            raise BoundError(f'pencil is not strictly dissipative at mu = {mu.tolist()}')
    return 2.0 * lam_E * lam_A


GAIN_DENSE_MAX = 1500


def projector_gain(ctx):
    """``||Pi_r [I; 0]||_2^2``: amplification from the differential block to the full state.

    Every matrix ``X = Pi_r X Pi_r^T`` satisfies
    ``||X||_F <= gain * ||X_11||_F`` because the algebraic rows are a fixed
    linear function of the differential ones. Residual estimators bound the
    differential block; multiplying by this gain bounds the full error.
    """
    if not isinstance(ctx, SaddlePointProjectors):
        return 1.0
    n = ctx.n
    if ctx.q == 0:
        return 1.0
    if n <= GAIN_DENSE_MAX:
        M = ctx.apply_pi_right(np.vstack([np.eye(n), np.zeros((ctx.q, n))]))
        return float(np.linalg.norm(M, 2) ** 2)
    dual = ctx.dual()

    def matvec(x):
        return ctx.apply_pi_right(np.concatenate([np.ravel(x), np.zeros(ctx.q)]))

    def rmatvec(y):
        return dual.apply_pi_left(np.ravel(y))[:n]

    op = spsla.LinearOperator((ctx.N, n), matvec=matvec, rmatvec=rmatvec, dtype=float)
    s = spsla.svds(op, k=1, return_singular_vectors=False, tol=1e-8)
    return float(s[0] ** 2)
