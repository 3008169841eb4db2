"""Affine parameter-dependent descriptor systems.

A system is given by four affine operators

    E(mu) = sum_k theta_k(mu) E_k,   A(mu) = ...,   B(mu) = ...,   C(mu) = ...

with ``theta_0 == 1``. Evaluating at a parameter yields a :class:`DaeInstance`
holding sparse matrices, which the solvers in this package consume.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from rbbt import instrument
from rbbt.errors import DomainError, FactorizationError, FallbackRequired, ShapeError, StructureError
from rbbt.theta import One, ThetaExpr

SMW_THETA_TOL = 1e-14
SMW_COND_MAX = 1e12
LOWRANK_CHECK_TOL = 1e-12


def _as_sparse(mat):
    if sps.issparse(mat):
        return sps.csc_matrix(mat, dtype=float)
    return sps.csc_matrix(np.atleast_2d(np.asarray(mat, dtype=float)))


class AffineMatrixOperator:
    """Matrix-valued function ``sum_k theta_k(mu) M_k``.

    Parameters
    ----------
    terms
        Sequence of ``(theta, matrix)`` pairs. The first coefficient must be
        :class:`~rbbt.theta.One`; pass a zero matrix if there is no constant part.
    lowrank
        Optional mapping ``k -> (U_k, V_k)`` with ``M_k = U_k V_k^T`` for
        terms ``k >= 1``.
    """

    def __init__(self, terms, lowrank=None):
        terms = [(theta, _as_sparse(mat)) for theta, mat in terms]
        if not terms:
            raise StructureError('an affine operator needs at least one term')
        if not terms[0][0].is_one():
            raise StructureError('the first affine term must have coefficient One()')
        shape = terms[0][1].shape
        for theta, mat in terms:
            if not isinstance(theta, ThetaExpr):
                raise TypeError('coefficients must be ThetaExpr instances')
            if mat.shape != shape:
                raise ShapeError(f'term shapes differ: {mat.shape} vs {shape}')
        self.terms = tuple(terms)
        self.shape = shape
        self.lowrank = {}
        for k, (U, V) in (lowrank or {}).items():
            k = int(k)
            if k < 1 or k >= len(terms):
                raise StructureError(f'low-rank factor given for invalid term index {k}')
            U = np.atleast_2d(np.asarray(U, dtype=float))
            V = np.atleast_2d(np.asarray(V, dtype=float))
            if U.shape[0] != shape[0] or V.shape[0] != shape[1] or U.shape[1] != V.shape[1]:
                raise ShapeError(f'low-rank factor of term {k} has wrong shape')
            M = terms[k][1].toarray()
            nrm = max(np.linalg.norm(M), 1.0)
            if np.linalg.norm(U @ V.T - M) > LOWRANK_CHECK_TOL * nrm:
                raise StructureError(f'low-rank factor of term {k} does not reproduce the term matrix')
            self.lowrank[k] = (U, V)

    @classmethod
    def constant(cls, mat):
        return cls([(One(), mat)])

    @property
    def num_terms(self):
        return len(self.terms)

    @property
    def parametric(self):
        return any(mat.nnz > 0 for _, mat in self.terms[1:])

    def thetas(self, mu):
        return np.array([theta(mu) for theta, _ in self.terms])

    def evaluate(self, mu):
        """Return ``sum_k theta_k(mu) M_k`` as a CSC matrix."""
        coeffs = self.thetas(mu)
        result = coeffs[0] * self.terms[0][1]
        for c, (_, mat) in zip(coeffs[1:], self.terms[1:]):
            result = result + c * mat
        return sps.csc_matrix(result)

    def transpose(self):
        lowrank = {k: (V, U) for k, (U, V) in self.lowrank.items()}
        return AffineMatrixOperator([(t, m.T) for t, m in self.terms], lowrank)

    def scaled(self, factor):
        lowrank = {k: (factor * U, V) for k, (U, V) in self.lowrank.items()}
        return AffineMatrixOperator([(t, factor * m) for t, m in self.terms], lowrank)


def evaluate_operator(op, mu, param_box=None):
    """Evaluate an affine operator, optionally checking ``mu`` against a box."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if param_box is not None:
        check_parameter(mu, param_box)
    return op.evaluate(mu)


def check_parameter(mu, param_box, slack=1e-12):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    box = np.asarray(param_box, dtype=float).reshape(-1, 2)
    if mu.shape != (box.shape[0],):
        raise ShapeError(f'parameter of length {mu.size} given, system expects {box.shape[0]}')
    scale = np.maximum(1.0, np.abs(box).max(axis=1))
    if np.any(mu < box[:, 0] - slack * scale) or np.any(mu > box[:, 1] + slack * scale):
        raise DomainError(f'parameter {mu.tolist()} lies outside the box {box.tolist()}')
    return mu


@dataclass(frozen=True)
class StokesLike:
    """Saddle-point layout ``E = [[E11, 0], [0, 0]]``, ``A = [[A11, G], [G^T, 0]]``."""

    n: int
    q: int
    name: str = 'stokes'

    def to_dict(self):
        return {'type': 'stokes', 'n': self.n, 'q': self.q}


@dataclass(frozen=True)
class Mechanical:
    """Second-order mechanical system written in first-order form."""

    n_x: int
    q: int
    name: str = 'mechanical'

    def to_dict(self):
        return {'type': 'mechanical', 'n_x': self.n_x, 'q': self.q}


@dataclass(frozen=True)
class GeneralSmall:
    """No exploitable structure; projectors come from a dense decomposition."""

    name: str = 'general'

    def to_dict(self):
        return {'type': 'general'}


def kind_from_dict(data):
    if data['type'] == 'stokes':
        return StokesLike(int(data['n']), int(data['q']))
    if data['type'] == 'mechanical':
        return Mechanical(int(data['n_x']), int(data['q']))
    if data['type'] == 'general':
        return GeneralSmall()
    raise ValueError(f'unknown system kind {data["type"]!r}')


@dataclass
class DaeInstance:
    """A system evaluated at one parameter value.

    ``E`` and ``A`` are sparse CSC matrices, ``B`` and ``C`` dense arrays.
    """

    E: sps.csc_matrix
    A: sps.csc_matrix
    B: np.ndarray
    C: np.ndarray
    mu: np.ndarray
    kind: object = field(default_factory=GeneralSmall)
    index: int = 1
    dual: bool = False

    @property
    def N(self):
        return self.E.shape[0]

    def transposed(self):
        """The dual system ``(E^T, A^T, C^T, B^T)`` used for observability Gramians."""
        return DaeInstance(sps.csc_matrix(self.E.T), sps.csc_matrix(self.A.T), self.C.T.copy(),
                           self.B.T.copy(), self.mu, self.kind, self.index, not self.dual)

    def transfer(self, s):
        return _transfer(self.E, self.A, self.B, self.C, s)


class ParametricDaeSystem:
    """Affine parametric system ``E(mu) z' = A(mu) z + B(mu) u, y = C(mu) z``.

    Parameters
    ----------
    E, A, B, C
        :class:`AffineMatrixOperator` instances of shapes NxN, NxN, Nxm, pxN.
    param_box
        List of ``[lo, hi]`` intervals, one per parameter coordinate.
    kind
        One of :class:`StokesLike`, :class:`Mechanical`, :class:`GeneralSmall`.
    index
        Declared index of the pencil.
    """

    def __init__(self, E, A, B, C, param_box, kind=None, index=1, name='system', metadata=None):
        N = E.shape[0]
        if E.shape != (N, N) or A.shape != (N, N):
            raise ShapeError('E and A must be square and of equal size')
        if B.shape[0] != N or C.shape[1] != N:
            raise ShapeError('B must have N rows and C must have N columns')
        self.E, self.A, self.B, self.C = E, A, B, C
        self.param_box = np.asarray(param_box, dtype=float).reshape(-1, 2)
        if np.any(self.param_box[:, 0] > self.param_box[:, 1]):
            raise ValueError('parameter box has an empty interval')
        self.kind = kind if kind is not None else GeneralSmall()
        if isinstance(self.kind, StokesLike) and self.kind.n + self.kind.q != N:
            raise StructureError(f'saddle-point layout n + q = {self.kind.n + self.kind.q} does not match N = {N}')
        self.index = int(index)
        self.name = name
        self.metadata = dict(metadata or {})

    @property
    def N(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def d(self):
        return self.param_box.shape[0]

    @property
    def box_midpoint(self):
        return self.param_box.mean(axis=1)

    def check_parameter(self, mu):
        return check_parameter(mu, self.param_box)

    def at(self, mu):
        mu = self.check_parameter(mu)
        return DaeInstance(self.E.evaluate(mu), self.A.evaluate(mu), self.B.evaluate(mu).toarray(),
                           self.C.evaluate(mu).toarray(), mu, self.kind, self.index)

    def is_parametric(self):
        return any(op.parametric for op in (self.E, self.A, self.B, self.C))

    def check_regularity(self, mus, rng=None):
        """Spot-check that ``s E(mu) - A(mu)`` is nonsingular at a random ``s``."""
        rng = np.random.default_rng(rng)
        s = complex(rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0))
        for mu in mus:
            inst = self.at(mu)
            M = (s * inst.E - inst.A).toarray() if self.N <= 2000 else None
            if M is not None:
                sv = spla.svdvals(M)
                if sv[-1] <= 1e-13 * sv[0]:
                    return False
            else:
                try:
                    spsla.splu(sps.csc_matrix(s * inst.E - inst.A))
                except RuntimeError:
                    return False
        return True


REFINEMENT_STEPS = 2


def _transfer(E, A, B, C, s):
    M = sps.csc_matrix(s * E - A, dtype=complex)
    instrument.record('transfer', M.shape[0])
    try:
        lu = spsla.splu(M)
    except RuntimeError as exc:
        raise FactorizationError(f'shifted pencil is singular at s = {s}') from exc
    Bc = np.asarray(B.toarray() if sps.issparse(B) else B, dtype=complex)
    X = lu.solve(Bc)
    if not np.all(np.isfinite(X)):
        raise FactorizationError(f'shifted pencil is singular at s = {s}')
    # saddle-point pencils at large |s| lose digits in SuperLU; refinement restores them
    for _ in range(REFINEMENT_STEPS):
        X = X + lu.solve(Bc - M @ X)
    return C @ X


def transfer_function(sys, mu, s):
    """Evaluate ``C(mu) (s E(mu) - A(mu))^{-1} B(mu)`` with one sparse LU."""
    return sys.at(mu).transfer(s)


@dataclass
class SmwPrecomputation:
    """Offline blocks for evaluating transfer functions by the Woodbury identity.

    For each frequency ``omega_i`` with ``K_i = i omega_i E_0 - A_0`` the
    attributes hold the blocks ``C_a K_i^{-1} B_b``, ``C_a K_i^{-1} U``,
    ``V^T K_i^{-1} U`` and ``V^T K_i^{-1} B_b`` for all affine terms a, b.
    """

    omegas: np.ndarray
    CKB: list
    CKU: list
    VKU: list
    VKB: list
    U: np.ndarray
    V: np.ndarray
    # (operator, term index, rank) for every block of U/V in order; operator is 'E' or 'A'
    layout: list
    system: ParametricDaeSystem

    def omega_matrix(self, mu, omega_index):
        """Diagonal of ``Omega(mu, i omega)``."""
        omega = self.omegas[omega_index]
        entries = []
        for op, k, r in self.layout:
            if op == 'E':
                value = 1j * omega * self.system.E.terms[k][0](mu)
            else:
                value = -self.system.A.terms[k][0](mu) + 0j
            entries.extend([value] * r)
        return np.array(entries, dtype=complex)


def precompute_smw(sys, omegas):
    """Precompute the frequency-wise blocks for :func:`transfer_function_smw`.

    Every parametric term of E and A must carry a low-rank factorization.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    Us, Vs, layout = [], [], []
    for name, op in (('E', sys.E), ('A', sys.A)):
        for k in range(1, op.num_terms):
            if k not in op.lowrank:
                raise StructureError(f'term {k} of {name} has no low-rank factorization')
            U, V = op.lowrank[k]
            Us.append(U)
            Vs.append(V)
            layout.append((name, k, U.shape[1]))
    N = sys.N
    U = np.hstack(Us) if Us else np.zeros((N, 0))
    V = np.hstack(Vs) if Vs else np.zeros((N, 0))
    E0 = sys.E.terms[0][1]
    A0 = sys.A.terms[0][1]
    Bs = [mat.toarray() for _, mat in sys.B.terms]
    Cs = [mat.toarray() for _, mat in sys.C.terms]
    CKB, CKU, VKU, VKB = [], [], [], []
    for omega in omegas:
        K = sps.csc_matrix(1j * omega * E0 - A0, dtype=complex)
        try:
            lu = spsla.splu(K)
        except RuntimeError as exc:
            raise FactorizationError(f'base pencil is singular at omega = {omega}') from exc
        KB = [lu.solve(b.astype(complex)) for b in Bs]
        KU = lu.solve(U.astype(complex)) if U.shape[1] else np.zeros((N, 0), dtype=complex)
        CKB.append([[c @ kb for kb in KB] for c in Cs])
        CKU.append([c @ KU for c in Cs])
        VKU.append(V.T @ KU)
        VKB.append([V.T @ kb for kb in KB])
    return SmwPrecomputation(omegas, CKB, CKU, VKU, VKB, U, V, layout, sys)


def transfer_function_smw(pre, mu, omega_index):
    """Evaluate ``G(mu, i omega)`` from precomputed blocks at cost independent of N.

    Raises
    ------
    FallbackRequired
        If a parametric coefficient vanishes or the capacitance matrix is
        too badly conditioned; the caller should use :func:`transfer_function`.
    """
    sys = pre.system
    mu = sys.check_parameter(mu)
    theta_B = sys.B.thetas(mu)
    theta_C = sys.C.thetas(mu)
    i = omega_index
    r = pre.U.shape[1]
    if r:
        diag = pre.omega_matrix(mu, i)
        if np.any(np.abs(diag) < SMW_THETA_TOL):
            raise FallbackRequired('a parametric coefficient vanishes; Omega is singular')
        cap = np.diag(1.0 / diag) + pre.VKU[i]
        if np.linalg.cond(cap) > SMW_COND_MAX:
            raise FallbackRequired('capacitance matrix is too badly conditioned')
        cap_lu = spla.lu_factor(cap)
    G = np.zeros((sys.p, sys.m), dtype=complex)
    for a, tc in enumerate(theta_C):
        if tc == 0:
            continue
        for b, tb in enumerate(theta_B):
            if tb == 0:
                continue
            block = pre.CKB[i][a][b]
            if r:
                block = block - pre.CKU[i][a] @ spla.lu_solve(cap_lu, pre.VKB[i][b])
            G += tc * tb * block
    return G
