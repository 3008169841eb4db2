"""Reduced basis method for parametric projected Lyapunov equations.

Offline, a greedy loop over a finite test set collects full low-rank solves
into a global orthonormal basis ``V_glob``. Online, the basis is projected
onto the finite deflating subspace at the requested parameter and a small
dense Lyapunov equation is solved. Residual-based estimators bound the error
using a lower bound ``alpha(mu)`` of the smallest singular value of the
projected Lyapunov operator.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.io
import scipy.linalg as spla

from rbbt.errors import (BoundError, ConvergenceError, EmptyBasisError, ShapeError, StabilityError)
from rbbt.lyapunov import AdiOptions, lowrank_norm, lradi_nonsymmetric, lradi_projected
from rbbt.projectors import alpha_cache, alpha_lower_bound, build_projector_context, projector_gain

log = logging.getLogger(__name__)

ORTH_DROP_TOL = 1e-12
SIDES = ('controllability', 'observability')


def orth(M, drop_tol=ORTH_DROP_TOL):
    """Orthonormal basis of ``range(M)`` by QR with column pivoting.

    Columns whose diagonal factor falls below ``drop_tol`` times the largest
    are dropped.
    """
    M = np.asarray(M)
    if M.shape[1] == 0:
        return M.copy()
    scale = np.linalg.norm(M)
    if scale == 0:
        return M[:, :0]
    Q, R, _ = spla.qr(M / scale, mode='economic', pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > drop_tol * d[0])) if d.size else 0
    return Q[:, :r]


@dataclass
class EstimatorReport:
    mu: np.ndarray
    delta1: float
    residual_fro: float
    alpha: float
    online_rank: int
    delta2: Optional[float] = None
    error_fro: Optional[float] = None
    gain: float = 1.0

    def to_dict(self):
        return {'mu': np.atleast_1d(self.mu).tolist(), 'delta1': self.delta1, 'delta2': self.delta2,
                'residual_fro': self.residual_fro, 'alpha': self.alpha, 'online_rank': self.online_rank,
                'error_fro': self.error_fro, 'gain': self.gain}


@dataclass
class ReducedBasis:
    V: np.ndarray
    side: str
    sampled_params: list
    tol: float
    iterations: list = field(default_factory=list)
    final_reports: list = field(default_factory=list)
    converged: bool = False
    role: str = 'solution'
    error_basis: Optional['ReducedBasis'] = None

    @property
    def rank(self):
        return self.V.shape[1]

    @property
    def num_solves(self):
        return len(self.sampled_params)

    def save(self, directory, stem=None):
        stem = stem or f'basis_{self.side}'
        os.makedirs(directory, exist_ok=True)
        scipy.io.mmwrite(os.path.join(directory, stem + '.mtx'), self.V)
        meta = {'schema': 1, 'side': self.side, 'role': self.role, 'tol': self.tol,
                'converged': self.converged,
                'sampled_params': [np.atleast_1d(m).tolist() for m in self.sampled_params],
                'iterations': self.iterations,
                'final_reports': [r.to_dict() for r in self.final_reports]}
        if self.error_basis is not None:
            self.error_basis.save(directory, stem + '_error')
            meta['error_basis'] = stem + '_error'
        with open(os.path.join(directory, stem + '.json'), 'w') as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, directory, stem):
        with open(os.path.join(directory, stem + '.json')) as fh:
            meta = json.load(fh)
        V = np.asarray(scipy.io.mmread(os.path.join(directory, stem + '.mtx')))
        err = cls.load(directory, meta['error_basis']) if meta.get('error_basis') else None
        reports = [EstimatorReport(np.array(r['mu']), r['delta1'], r['residual_fro'], r['alpha'],
                                   r['online_rank'], r['delta2'], r.get('error_fro'), r.get('gain', 1.0))
                   for r in meta['final_reports']]
        return cls(V, meta['side'], [np.array(m) for m in meta['sampled_params']], meta['tol'],
                   meta['iterations'], reports, meta['converged'], meta['role'], err)


@dataclass
class OnlineSolution:
    mu: np.ndarray
    V: np.ndarray
    Z_tilde: np.ndarray
    X: np.ndarray

    @property
    def Z(self):
        return self.V @ self.Z_tilde


@dataclass
class RbOptions:
    """Settings of the greedy loop.

    ``estimator`` selects the quantity driving the greedy choice. With
    ``'delta2'`` a dedicated error basis is grown after every enrichment by
    the error-equation variant with tolerance ``error_tol_factor * tol``.
    """

    adi: AdiOptions = field(default_factory=AdiOptions)
    max_iterations: int = 50
    estimator: str = 'delta1'
    relative: bool = False
    workers: int = 1
    error_tol_factor: float = 0.1
    error_max_iterations: int = 5
    mu_ref: Optional[np.ndarray] = None


class _Sided:
    """Evaluated system, projector context and dissipativity bound on one side."""

    def __init__(self, sys, mu, side, acache):
        if side not in SIDES:
            raise ValueError(f'unknown side {side!r}')
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        inst = sys.at(self.mu)
        ctx = build_projector_context(inst)
        if side == 'observability':
            inst, ctx = inst.transposed(), ctx.dual()
        self.inst = inst
        self.ctx = ctx
        self.E = inst.E.tocsc()
        self.A = inst.A.tocsc()
        self.PiB = ctx.apply_pi_left(inst.B)
        self.alpha = alpha_lower_bound(sys, self.mu, acache)
        self.gain = projector_gain(ctx)


class _SideCache:
    def __init__(self, sys, side, mu_ref=None):
        self.sys = sys
        self.side = side
        self.acache = alpha_cache(sys, mu_ref)
        self._store = {}

    def get(self, mu):
        key = tuple(np.round(np.atleast_1d(np.asarray(mu, dtype=float)), 15))
        if key not in self._store:
            self._store[key] = _Sided(self.sys, mu, self.side, self.acache)
        return self._store[key]


def local_basis(V_glob, ctx):
    """``orth(Pi_r(mu) V_glob)``; raises :class:`EmptyBasisError` if nothing survives."""
    W = ctx.apply_pi_right(V_glob)
    if V_glob.shape[1] == 0 or np.linalg.norm(W) <= ORTH_DROP_TOL * max(np.linalg.norm(V_glob), 1e-300):
        raise EmptyBasisError('projected basis is numerically zero')
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    r = int(np.sum(s > ORTH_DROP_TOL * s[0]))
    if r == 0:
        raise EmptyBasisError('projected basis is numerically zero')
    return U[:, :r]


def _reduced_lyapunov(Er, Ar, Q):
    """Solve ``Er X Ar^T + Ar X Er^T = -Q`` for small dense matrices."""
    F = np.linalg.solve(Er, Ar)
    ev = np.linalg.eigvals(F)
    if ev.size and np.max(ev.real) >= 0:
        raise StabilityError(f'reduced pencil is not stable (max real part {np.max(ev.real):.3e})')
    Qt = np.linalg.solve(Er, np.linalg.solve(Er, Q).T).T
    return spla.solve_continuous_lyapunov(F, -Qt)


def online_solve(inst_E, inst_A, PiB, V, mu=None):
    """Galerkin solve of the projected Lyapunov equation on ``span(V)``.

    Solves ``(V^T E V) X (V^T A V)^T + (V^T A V) X (V^T E V)^T = -(V^T PiB)(V^T PiB)^T``
    and factors ``X = Z_tilde Z_tilde^T`` by a symmetric eigendecomposition.
    """
    Er = V.T @ (inst_E @ V)
    Ar = V.T @ (inst_A @ V)
    Br = V.T @ PiB
    X = _reduced_lyapunov(Er, Ar, Br @ Br.T)
    X = 0.5 * (X + X.T)
    w, U = np.linalg.eigh(X)
    keep = w > 1e-14 * max(w.max(initial=0.0), 1e-300)
    Zt = U[:, keep] * np.sqrt(w[keep])
    return OnlineSolution(None if mu is None else np.atleast_1d(mu), V, Zt, X)


def _residual_factor(E, A, Z, PiB):
    k, m = Z.shape[1], PiB.shape[1]
    F = np.hstack([A @ Z, E @ Z, PiB])
    K = np.zeros((2 * k + m, 2 * k + m))
    K[:k, k:2 * k] = np.eye(k)
    K[k:2 * k, :k] = np.eye(k)
    K[2 * k:, 2 * k:] = np.eye(m)
    return F, K


def residual_fro(E, A, Z, PiB):
    """``||A Z Z^T E^T + E Z Z^T A^T + PiB PiB^T||_F`` via a thin QR of the stacked factor."""
    F, K = _residual_factor(E, A, Z, PiB)
    return lowrank_norm(F, K)


def delta1(res, alpha, gain=1.0):
    """First estimator ``gain * ||R(mu)||_F / alpha(mu)``.

    With ``gain = 1`` this bounds the error of the differential block; the
    projector gain from :func:`~rbbt.projectors.projector_gain` extends it
    to the full state including the algebraic rows.
    """
    if not alpha > 0:
        raise BoundError('alpha must be positive')
    return gain * res / alpha


def error_galerkin(E, A, Z, PiB, Ve):
    """Galerkin approximation ``E_hat = Ve X Ve^T`` of the error equation.

    The error ``P - Z Z^T`` solves ``E X A^T + A X E^T = -R`` with the
    residual ``R`` of ``Z Z^T``. Returns ``(X, norm of the residual of
    Z Z^T + E_hat)``.
    """
    F, K = _residual_factor(E, A, Z, PiB)
    G = Ve.T @ F
    Xe = _reduced_lyapunov(Ve.T @ (E @ Ve), Ve.T @ (A @ Ve), G @ K @ G.T)
    Xe = 0.5 * (Xe + Xe.T)
    r = Ve.shape[1]
    F2 = np.hstack([F, A @ Ve, E @ Ve])
    n1 = K.shape[0]
    K2 = np.zeros((n1 + 2 * r, n1 + 2 * r))
    K2[:n1, :n1] = K
    K2[n1:n1 + r, n1 + r:] = Xe
    K2[n1 + r:, n1:n1 + r] = Xe
    return Xe, lowrank_norm(F2, K2)


def delta2(E, A, Z, PiB, Ve, alpha, gain=1.0):
    """Second estimator ``||E_hat||_F + gain * ||R_hat||_F / alpha``.

    ``Ve`` is an orthonormal basis (inside the finite deflating subspace) on
    which the error equation is solved. If ``Ve`` spans the solution basis,
    Galerkin orthogonality gives ``E_hat = 0`` and this equals the first
    estimator.
    """
    if not alpha > 0:
        raise BoundError('alpha must be positive')
    Xe, res_hat = error_galerkin(E, A, Z, PiB, Ve)
    return float(np.linalg.norm(Xe)) + gain * res_hat / alpha


def estimate(sided, basis, error_basis=None, relative=False):
    """Online solve and estimators at one parameter."""
    V = local_basis(basis.V if isinstance(basis, ReducedBasis) else basis, sided.ctx)
    sol = online_solve(sided.E, sided.A, sided.PiB, V, sided.mu)
    Z = sol.Z
    res = residual_fro(sided.E, sided.A, Z, sided.PiB)
    d1 = delta1(res, sided.alpha, sided.gain)
    d2 = None
    if error_basis is not None:
        Eb = error_basis.V if isinstance(error_basis, ReducedBasis) else error_basis
        try:
            Ve = local_basis(Eb, sided.ctx)
        except EmptyBasisError:
            Ve = None
        # an empty error basis means E_hat = 0, and delta2 reduces to delta1
        d2 = d1 if Ve is None else delta2(sided.E, sided.A, Z, sided.PiB, Ve, sided.alpha, sided.gain)
    if relative:
        scale = max(np.linalg.norm(sol.Z_tilde.T @ sol.Z_tilde), 1e-300)
        d1 = d1 / scale
        d2 = None if d2 is None else d2 / scale
    return EstimatorReport(sided.mu, d1, res, sided.alpha, Z.shape[1], d2, gain=sided.gain), sol


def _full_solve(sided, opts, side):
    return lradi_projected(sided.E, sided.A, sided.PiB, sided.ctx, None, opts.adi, side, sided.mu)


def _sweep(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _check_test_set(sys, D_test):
    if len(D_test) == 0:
        raise ShapeError('test parameter set is empty')
    out = [np.atleast_1d(np.asarray(mu, dtype=float)) for mu in D_test]
    for mu in out:
        sys.check_parameter(mu)
    return out


def _enrich(V, Z):
    Zs = Z / max(np.linalg.norm(Z), 1e-300)
    W = Zs if V is None else np.hstack([V, Zs - V @ (V.T @ Zs)])
    Q = orth(W)
    # second pass restores orthonormality to working accuracy
    Q, _ = np.linalg.qr(Q)
    return Q


def offline_build(sys, side, D_test, tol, opts=None):
    """Greedy construction of a global basis (offline phase).

    Parameters
    ----------
    sys
        Saddle-point :class:`~rbbt.param_system.ParametricDaeSystem`.
    side
        ``'controllability'`` or ``'observability'`` (dual system).
    D_test
        Finite list of test parameters; the first one seeds the basis.
    tol
        Threshold for the maximal estimator (absolute unless
        ``opts.relative``).
    opts
        :class:`RbOptions`.

    Returns
    -------
    ReducedBasis
        With per-iteration estimator data and a final report covering every
        test parameter, sampled ones included.
    """
    opts = opts or RbOptions()
    D_test = _check_test_set(sys, D_test)
    if opts.estimator not in ('delta1', 'delta2'):
        raise ValueError(f'unknown estimator {opts.estimator!r}')
    cache = _SideCache(sys, side, opts.mu_ref)
    sampled = [0]
    V = None
    err_basis = None
    iterations = []
    converged = False
    warned = False
    idx = 0
    while True:
        sided = cache.get(D_test[idx])
        try:
            Z = _full_solve(sided, opts, side).Z
        except ConvergenceError as exc:
            exc.partial = ReducedBasis(V if V is not None else np.zeros((sys.N, 0)), side,
                                       [D_test[i] for i in sampled[:-1]], tol, iterations)
            raise
        before = iterations[-1]['delta_max'] if iterations else None
        V = _enrich(V, Z)
        if opts.estimator == 'delta2':
            err_basis = offline_build_error_variant(
                sys, side, D_test, opts.error_tol_factor * tol,
                RbOptions(adi=opts.adi, max_iterations=opts.error_max_iterations, workers=opts.workers,
                          mu_ref=opts.mu_ref), solution_basis=V, _cache=cache)
        if V.shape[1] > sys.N // 2 and not warned:
            log.warning('global basis dimension %d exceeds N/2 = %d', V.shape[1], sys.N // 2)
            warned = True
        candidates = [i for i in range(len(D_test)) if i not in sampled]
        record = {'iteration': len(iterations) + 1, 'sampled_index': idx,
                  'mu': D_test[idx].tolist(), 'basis_dim': int(V.shape[1])}
        if before is not None:
            rep, _ = estimate(sided, V, err_basis, opts.relative)
            record['delta_at_sample_before'] = before
            record['delta_at_sample_after'] = _pick(rep, opts.estimator)
        if not candidates:
            record['delta_max'] = 0.0
            iterations.append(record)
            converged = True
            break
        reports = _sweep(lambda i: estimate(cache.get(D_test[i]), V, err_basis, opts.relative)[0],
                         candidates, opts.workers)
        values = np.array([_pick(r, opts.estimator) for r in reports])
        j = int(np.argmax(values))  # first maximal index wins
        record.update(delta_max=float(values[j]), argmax_index=int(candidates[j]),
                      estimates={int(i): float(v) for i, v in zip(candidates, values)})
        iterations.append(record)
        log.info('greedy iteration %d: basis %d, max estimate %.3e', record['iteration'], V.shape[1], values[j])
        if values[j] <= tol:
            converged = True
            break
        if len(iterations) >= opts.max_iterations:
            break
        idx = candidates[j]
        sampled.append(idx)
    final = _sweep(lambda mu: estimate(cache.get(mu), V, err_basis, opts.relative)[0], D_test, opts.workers)
    return ReducedBasis(V, side, [D_test[i] for i in sampled], tol, iterations, final, converged,
                        error_basis=err_basis)


def _pick(report, estimator):
    return report.delta2 if estimator == 'delta2' and report.delta2 is not None else report.delta1


def _error_rhs(sided, solution_basis):
    """Factors ``B_l = [A Z, E Z, PiB]`` and ``B_r = [E Z, A Z, PiB]`` of the residual."""
    if solution_basis is None or solution_basis.shape[1] == 0:
        return sided.PiB, sided.PiB, np.zeros((sided.E.shape[0], 0))
    V = local_basis(solution_basis, sided.ctx)
    Z = online_solve(sided.E, sided.A, sided.PiB, V, sided.mu).Z
    AZ, EZ = sided.A @ Z, sided.E @ Z
    return np.hstack([AZ, EZ, sided.PiB]), np.hstack([EZ, AZ, sided.PiB]), Z


def offline_build_error_variant(sys, side, D_test, tol, opts=None, solution_basis=None, _cache=None):
    """Greedy construction of a basis for the error equation.

    At each sample the error equation ``E X A^T + A X E^T = -B_l B_r^T`` for
    the online solution from ``solution_basis`` is solved by two-sided ADI
    and the basis is enriched with the left factor. Selection is driven by
    the residual of the projected error approximation divided by ``alpha``,
    which is the second term of the ``delta2`` estimator. With an empty
    solution basis this reduces to :func:`offline_build` with ``delta1``.
    """
    opts = opts or RbOptions()
    D_test = _check_test_set(sys, D_test)
    cache = _cache or _SideCache(sys, side, opts.mu_ref)
    if solution_basis is not None and isinstance(solution_basis, ReducedBasis):
        solution_basis = solution_basis.V

    def err_estimate(i, Vg):
        sided = cache.get(D_test[i])
        Bl, Br, Z = _error_rhs(sided, solution_basis)
        Ve = local_basis(Vg, sided.ctx)
        if Z.shape[1]:
            Xe, res_hat = error_galerkin(sided.E, sided.A, Z, sided.PiB, Ve)
        else:
            sol = online_solve(sided.E, sided.A, sided.PiB, Ve, sided.mu)
            res_hat = residual_fro(sided.E, sided.A, sol.Z, sided.PiB)
        return EstimatorReport(sided.mu, sided.gain * res_hat / sided.alpha, res_hat, sided.alpha,
                               Ve.shape[1], gain=sided.gain)

    idx = 0
    if solution_basis is not None and solution_basis.shape[1]:
        # the error vanishes at parameters already used for the solution
        # basis, so seed where the solution residual is largest instead
        seeds = _sweep(lambda mu: estimate(cache.get(mu), solution_basis)[0].delta1, D_test, opts.workers)
        idx = int(np.argmax(seeds))
    sampled = [idx]
    V = None
    iterations = []
    converged = False
    while True:
        sided = cache.get(D_test[idx])
        Bl, Br, _ = _error_rhs(sided, solution_basis)
        fac = lradi_nonsymmetric(sided.E, sided.A, Bl, Br, sided.ctx, None, opts.adi, side, sided.mu)
        if fac.Z.shape[1]:
            V = _enrich(V, fac.Z)
        candidates = [i for i in range(len(D_test)) if i not in sampled]
        record = {'iteration': len(iterations) + 1, 'sampled_index': idx,
                  'basis_dim': 0 if V is None else int(V.shape[1])}
        if not candidates or V is None:
            record['delta_max'] = 0.0
            iterations.append(record)
            converged = True
            break
        reports = _sweep(lambda i: err_estimate(i, V), candidates, opts.workers)
        values = np.array([r.delta1 for r in reports])
        j = int(np.argmax(values))
        record.update(delta_max=float(values[j]), argmax_index=int(candidates[j]))
        iterations.append(record)
        if values[j] <= tol:
            converged = True
            break
        if len(iterations) >= opts.max_iterations:
            break
        idx = candidates[j]
        sampled.append(idx)
    if V is None:
        V = np.zeros((sys.N, 0))
    return ReducedBasis(V, side, [D_test[i] for i in sampled], tol, iterations, [], converged, role='error')


def online_gramian_factor(sys, basis, mu, side='controllability'):
    """Online low-rank Gramian factor ``V(mu) Z_tilde`` at a parameter."""
    sided = _Sided(sys, mu, side, alpha_cache(sys))
    V = local_basis(basis.V if isinstance(basis, ReducedBasis) else basis, sided.ctx)
    return online_solve(sided.E, sided.A, sided.PiB, V, sided.mu).Z
