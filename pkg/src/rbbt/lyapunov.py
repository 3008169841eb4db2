"""Low-rank solvers for projected Lyapunov equations.

The proper Gramian solves the projected continuous-time equation

    E P A^T + A P E^T = -Pi_l B B^T Pi_l^T,   P = Pi_r P Pi_r^T,

by low-rank ADI with shifted solves ``S(p) = (E + p A)^{-1}``. The improper
Gramian solves a projected discrete-time equation, whose Smith iteration
terminates after as many steps as the nilpotency index.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla
from scipy.special import ellipj, ellipk

from rbbt.dense import dense_projected_lyap_oracle, orth_range, quasi_weierstrass_oracle  # noqa: F401
from rbbt import instrument
from rbbt.errors import ConvergenceError, FactorizationError, ShapeError, StructureError

log = logging.getLogger(__name__)

PROJECTION_DEFECT_TOL = 1e-8
NILPOTENCY_TOL = 1e-10


@dataclass
class ShiftSequence:
    """Stable, conjugate-closed ADI shifts, used cyclically."""

    shifts: list
    cyclic: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shifts = [complex(p) if abs(np.imag(p)) > 0 else float(np.real(p)) for p in self.shifts]
        if not self.shifts:
            raise ValueError('shift sequence is empty')
        for p in self.shifts:
            if np.real(p) >= 0:
                raise ValueError(f'shift {p} is not in the open left half plane')
        k = 0
        while k < len(self.shifts):
            p = self.shifts[k]
            if np.imag(p) != 0:
                if k + 1 >= len(self.shifts) or not np.isclose(self.shifts[k + 1], np.conj(p), rtol=1e-12, atol=0):
                    raise ValueError('complex shifts must be followed by their conjugate')
                k += 2
            else:
                k += 1

    def __len__(self):
        return len(self.shifts)

    def to_dict(self):
        return {'real': [float(np.real(p)) for p in self.shifts],
                'imag': [float(np.imag(p)) for p in self.shifts],
                'cyclic': self.cyclic, 'metadata': self.metadata}


@dataclass
class AdiOptions:
    max_iterations: int = 500
    residual_tolerance: float = 1e-12
    compression_tolerance: float = 1e-14
    shift_count: int = 12
    max_rank: Optional[int] = None
    shift_retries: int = 2

    def __post_init__(self):
        if self.max_iterations <= 0 or self.shift_count <= 0:
            raise ValueError('iteration and shift counts must be positive')
        if not 0 < self.residual_tolerance < 1:
            raise ValueError('residual tolerance must lie in (0, 1)')
        if self.compression_tolerance <= 0:
            raise ValueError('compression tolerance must be positive')


@dataclass
class LowRankFactor:
    """``P ~ Z Z^H``; for two-sided solves ``Z_right`` holds the second factor."""

    Z: np.ndarray
    side: str = 'controllability'
    residual_history: list = field(default_factory=list)
    mu: Optional[np.ndarray] = None
    shifts: Optional[ShiftSequence] = None
    Z_right: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def rank(self):
        return self.Z.shape[1]

    def gramian(self):
        R = self.Z if self.Z_right is None else self.Z_right
        return self.Z @ R.conj().T


def _dense(M):
    return M.toarray() if sps.issparse(M) else np.asarray(M)


def realify(Z):
    """``[Re Z, Im Z]`` so that the real factor reproduces ``Re(Z Z^H)``."""
    if np.iscomplexobj(Z):
        imag = Z.imag
        if np.linalg.norm(imag) == 0:
            return np.ascontiguousarray(Z.real)
        return np.hstack([Z.real, imag])
    return Z


def compress_factor(Z, tol=1e-14):
    """Column compression ``Z -> Z'`` with ``||Z Z^H - Z' Z'^H||_F <= tol ||Z Z^H||_F``.

    Complex factors are realified first. Uses a thin QR factorization and a
    truncated SVD of the triangular factor, keeping the minimal number of
    columns meeting the bound.
    """
    Z = realify(np.asarray(Z))
    if Z.ndim != 2:
        raise ShapeError('factor must be two-dimensional')
    if Z.shape[1] == 0:
        return Z
    Q, R = np.linalg.qr(Z, mode='reduced')
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    total = np.sqrt(np.sum(s ** 4))
    if total == 0:
        return Z[:, :0]
    # tail[r] = sqrt(sum_{j >= r} s_j^4)
    tail = np.sqrt(np.cumsum((s ** 4)[::-1])[::-1])
    tail = np.append(tail, 0.0)
    r = int(np.argmax(tail <= tol * total))
    return (Q @ U[:, :r]) * s[:r]


def compress_two_sided(Zl, Zr, tol=1e-14):
    """Compress ``Zl Zr^H`` to ``Zl' Zr'^H`` with relative Frobenius error ``tol``."""
    Zl, Zr = realify_pair(Zl, Zr)
    if Zl.shape[1] == 0:
        return Zl, Zr
    Ql, Rl = np.linalg.qr(Zl, mode='reduced')
    Qr, Rr = np.linalg.qr(Zr, mode='reduced')
    U, s, Vt = np.linalg.svd(Rl @ Rr.T)
    total = np.linalg.norm(s)
    if total == 0:
        return Zl[:, :0], Zr[:, :0]
    tail = np.append(np.sqrt(np.cumsum((s ** 2)[::-1])[::-1]), 0.0)
    r = int(np.argmax(tail <= tol * total))
    sq = np.sqrt(s[:r])
    return (Ql @ U[:, :r]) * sq, (Qr @ Vt[:r].T) * sq


def realify_pair(Zl, Zr):
    if np.iscomplexobj(Zl) or np.iscomplexobj(Zr):
        Zl = np.asarray(Zl, dtype=complex)
        Zr = np.asarray(Zr, dtype=complex)
        return np.hstack([Zl.real, Zl.imag]), np.hstack([Zr.real, Zr.imag])
    return np.asarray(Zl), np.asarray(Zr)


def lowrank_norm(F, K, G=None):
    """Frobenius norm of ``F K G^H`` (``G = F`` by default) without forming it."""
    if F.shape[1] == 0:
        return 0.0
    _, Rf = np.linalg.qr(F, mode='reduced')
    if G is None:
        Rg = Rf
    else:
        _, Rg = np.linalg.qr(G, mode='reduced')
    return float(np.linalg.norm(Rf @ K @ Rg.conj().T))


def residual_norm_lowrank(E, A, Z, PiB, PiB_right=None, Z_right=None):
    """``||A Z Z^H E^T + E Z Z^H A^T + PiB PiB^T||_F`` from the stacked factor.

    The residual equals ``F K F^H`` with ``F = [A Z, E Z, PiB]`` and a small
    indefinite kernel ``K``; its norm is that of ``R K R^H`` for the thin QR
    factor ``R`` of ``F``. With ``PiB_right`` / ``Z_right`` the right factors
    of a nonsymmetric right-hand side and solution are used.
    """
    Z = np.asarray(Z)
    PiB = np.atleast_2d(np.asarray(PiB))
    if PiB.shape[0] != E.shape[0] or (Z.size and Z.shape[0] != E.shape[0]):
        raise ShapeError('inconsistent factor dimensions')
    Z = Z.reshape(E.shape[0], -1)
    k, m = Z.shape[1], PiB.shape[1]
    K = np.zeros((2 * k + m, 2 * k + m))
    K[:k, k:2 * k] = np.eye(k)
    K[k:2 * k, :k] = np.eye(k)
    K[2 * k:, 2 * k:] = np.eye(m)
    Fl = np.hstack([A @ Z, E @ Z, PiB])
    if PiB_right is None and Z_right is None:
        return lowrank_norm(Fl, K)
    Zr = Z if Z_right is None else np.asarray(Z_right).reshape(E.shape[0], -1)
    Br = PiB if PiB_right is None else np.atleast_2d(np.asarray(PiB_right))
    # F_l K F_r^H with F_r = [A Zr, E Zr, Br]: A Z Zr^H E^T + E Z Zr^H A^T + PiB Br^T
    Fr = np.hstack([A @ Zr, E @ Zr, Br])
    return lowrank_norm(Fl, K, Fr)


# --------------------------------------------------------------------------
# shifts


def _arnoldi_ritz(apply_op, v0, steps):
    n = v0.size
    steps = min(steps, n)
    V = np.zeros((n, steps + 1))
    H = np.zeros((steps + 1, steps))
    V[:, 0] = v0 / np.linalg.norm(v0)
    k = steps
    for j in range(steps):
        w = apply_op(V[:, j])
        for _ in range(2):
            h = V[:, :j + 1].T @ w
            w = w - V[:, :j + 1] @ h
            H[:j + 1, j] += h
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] <= 1e-12 * max(np.linalg.norm(H[:j + 2, j]), 1e-300):
            k = j + 1
            break
        V[:, j + 1] = w / H[j + 1, j]
    return np.linalg.eigvals(H[:k, :k])


def wachspress_shifts(a, b, count):
    """Wachspress parameters for a real spectrum ``-b <= lambda <= -a < 0``."""
    if not 0 < a <= b:
        raise ValueError('need 0 < a <= b')
    if b / a < 1 + 1e-12:
        return [-a] * count
    k2 = 1.0 - (a / b) ** 2
    K = ellipk(k2)
    u = (2 * np.arange(1, count + 1) - 1) * K / (2 * count)
    _, _, dn, _ = ellipj(u, k2)
    return list(-b * dn)


def _rational_max(shifts, ritz):
    val = np.ones(ritz.size)
    for p in shifts:
        val *= np.abs((ritz - np.conj(p)) / (ritz + p))
    return val


def penzl_shifts(ritz, count):
    """Greedy selection of shifts from Ritz values minimizing the ADI rational function."""
    ritz = np.asarray(ritz)
    candidates = ritz[np.real(ritz) < 0]
    if candidates.size == 0:
        raise ValueError('no stable Ritz values')

    def closure(p):
        return [p] if abs(p.imag) <= 1e-12 * abs(p) else [p, np.conj(p)]

    best = min(candidates, key=lambda c: (np.max(_rational_max(closure(c), candidates)), abs(c)))
    shifts = closure(complex(best))
    while len(shifts) < count:
        vals = _rational_max(shifts, candidates)
        j = int(np.argmax(vals))
        if vals[j] <= 1e-15:
            break
        new = closure(complex(candidates[j]))
        if len(shifts) + len(new) > count and len(shifts) > 0:
            break
        shifts.extend(new)
    out = []
    for p in shifts:
        if abs(p.imag) <= 1e-12 * abs(p):
            out.append(float(p.real))
        elif p.imag > 0:
            out.extend([p, np.conj(p)])
    return out


def _is_symmetric_pencil(E, A):
    for M in (E, A):
        d = M - M.T
        dn = spsla.norm(d) if sps.issparse(d) else np.linalg.norm(d)
        mn = spsla.norm(M) if sps.issparse(M) else np.linalg.norm(M)
        if dn > 1e-12 * max(mn, 1e-300):
            return False
    return True


def generate_shifts(E, A, ctx=None, count=12, rng=0, arnoldi_steps=None):
    """ADI shifts from Ritz values of ``A^{-1} E`` on the finite deflating subspace.

    For the iteration ``S(p) = (E + p A)^{-1}`` a shift equal to an
    eigenvalue ``theta`` of ``A^{-1} E`` annihilates that mode, so Ritz values
    are used directly. Symmetric pencils get Wachspress parameters on the
    estimated real interval; other pencils get Penzl's greedy selection. If
    the Ritz estimation fails, log-spaced real shifts between crude bounds are
    returned and ``metadata['fallback']`` is set.
    """
    E = sps.csc_matrix(E) if sps.issparse(E) else sps.csc_matrix(np.atleast_2d(E))
    A = sps.csc_matrix(A) if sps.issparse(A) else sps.csc_matrix(np.atleast_2d(A))
    N = E.shape[0]
    symmetric = _is_symmetric_pencil(E, A)
    try:
        lu = spsla.splu(A)
    except RuntimeError as exc:
        raise FactorizationError('A is singular; cannot estimate the spectrum') from exc
    project = (lambda v: ctx.apply_pi_right(v)) if ctx is not None else (lambda v: v)

    def op(v):
        return project(lu.solve(E @ v))

    v0 = project(np.random.default_rng(rng).standard_normal(N))
    steps = arnoldi_steps or min(N, max(2 * count, 30))
    meta = {'symmetric': symmetric}
    ritz = np.array([])
    if np.linalg.norm(v0) > 0:
        try:
            ritz = _arnoldi_ritz(op, v0, steps)
        except (np.linalg.LinAlgError, ValueError):
            ritz = np.array([])
    ritz = ritz[np.isfinite(ritz)]
    if ritz.size:
        scale = np.max(np.abs(ritz))
        ritz = ritz[np.abs(ritz) > 1e-10 * scale]
    stable = ritz[np.real(ritz) < 0] if ritz.size else ritz
    if stable.size:
        if symmetric:
            mags = np.abs(np.real(stable))
            a, b = mags.min(), mags.max()
            if ritz.size >= steps and steps < N:
                # Ritz values from a truncated process underestimate the spread
                a = a / 2
            shifts = wachspress_shifts(a, b, count)
        else:
            shifts = penzl_shifts(stable, count)
        meta['ritz_count'] = int(stable.size)
        return ShiftSequence(shifts, metadata=meta)
    # crude bounds via norms
    meta['fallback'] = True
    log.warning('Ritz estimation failed; using log-spaced shifts')
    hi = spsla.norm(E, 1) * max(np.abs(lu.solve(np.ones(N))).max(), 1.0)
    lo = hi * 1e-6
    return ShiftSequence(list(-np.logspace(np.log10(lo), np.log10(hi), count)), metadata=meta)


# --------------------------------------------------------------------------
# ADI


class _ShiftedSolver:
    def __init__(self, E, A):
        self.E = sps.csc_matrix(E)
        self.A = sps.csc_matrix(A)
        self._cache = {}

    def solve(self, p, W):
        key = complex(p)
        if key not in self._cache:
            M = self.E + p * self.A
            if np.iscomplexobj(p) and np.imag(p) != 0:
                M = sps.csc_matrix(M, dtype=complex)
            instrument.record('adi', M.shape[0])
            try:
                self._cache[key] = spsla.splu(sps.csc_matrix(M))
            except RuntimeError as exc:
                self._cache[key] = None
                raise FactorizationError(f'E + p A is singular for p = {p}') from exc
        lu = self._cache[key]
        if lu is None:
            raise FactorizationError(f'E + p A is singular for p = {p}')
        if np.iscomplexobj(W) and not np.iscomplexobj(p):
            return lu.solve(W.real) + 1j * lu.solve(np.ascontiguousarray(W.imag))
        return lu.solve(np.asarray(W, dtype=complex if np.iscomplexobj(p) else float))


def _pair_boundaries(shifts):
    ends = []
    k = 0
    while k < len(shifts):
        k += 2 if np.imag(shifts[k]) != 0 else 1
        ends.append(k)
    return set(ends)


def _adi(E, A, W_list, ctx, shifts, opts, side, mu, norm_fn, project):
    """Shared ADI recursion on one or two right-hand sides."""
    E = sps.csc_matrix(E)
    A = sps.csc_matrix(A)
    solver = _ShiftedSolver(E, A)
    seq = list(shifts.shifts)
    boundaries = _pair_boundaries(seq)
    W = [np.array(w, dtype=float) for w in W_list]
    blocks = [[] for _ in W]
    rhs_norm = norm_fn(W)
    history = [1.0]
    if rhs_norm == 0:
        return [np.zeros((E.shape[0], 0)) for _ in W], [0.0], 0
    it = 0
    pos = 0
    rank = 0
    while it < opts.max_iterations:
        p = seq[pos % len(seq)]
        pos += 1
        try:
            V = [solver.solve(p, w) for w in W]
        except FactorizationError:
            log.warning('skipping singular shift %s', p)
            if pos > 2 * len(seq) and it == 0:
                raise
            continue
        it += 1
        V = [project(v) for v in V]
        kappa = np.sqrt(-2.0 * np.real(p))
        for k, v in enumerate(V):
            W[k] = W[k] - 2.0 * np.real(p) * (A @ v)
            blocks[k].append(kappa * v)
        rank += V[0].shape[1]
        if (pos % len(seq)) in boundaries or (pos % len(seq)) == 0:
            if any(np.iscomplexobj(w) for w in W):
                W = [np.real_if_close(w, tol=1e6) for w in W]
            res = norm_fn(W) / rhs_norm
            history.append(res)
            if res <= opts.residual_tolerance:
                return [np.hstack(b) for b in blocks], history, it
            if opts.max_rank is not None and rank >= opts.max_rank:
                break
    raise ConvergenceError(f'ADI did not reach {opts.residual_tolerance:.1e} after {it} iterations '
                           f'(residual {history[-1]:.2e})', history)


def _projector(ctx, side):
    if ctx is None:
        return lambda V: V
    apply = ctx.apply_pi_right

    def project(V):
        PV = apply(V.real) + (1j * apply(np.ascontiguousarray(V.imag)) if np.iscomplexobj(V) else 0)
        nv = np.linalg.norm(V)
        if np.linalg.norm(PV - V) > PROJECTION_DEFECT_TOL * max(nv, 1e-300):
            log.debug('re-projecting ADI iterate (%s side)', side)
            return PV
        return V
    return project


def _adi_auto(E, A, W_list, ctx, shifts, opts, side, mu, norm_fn, project):
    """Run ADI; with generated shifts, retry on stagnation with four times as many.

    Lightly damped pencils have many eigenvalues close to the imaginary axis,
    and a short shift cycle then converges very slowly.
    """
    if shifts is not None:
        return _adi(E, A, W_list, ctx, shifts, opts, side, mu, norm_fn, project) + (shifts,)
    count, steps = opts.shift_count, max(2 * opts.shift_count, 30)
    for attempt in range(opts.shift_retries + 1):
        shifts = generate_shifts(E, A, ctx, count, arnoldi_steps=min(E.shape[0], steps))
        try:
            return _adi(E, A, W_list, ctx, shifts, opts, side, mu, norm_fn, project) + (shifts,)
        except ConvergenceError:
            if attempt == opts.shift_retries or steps >= E.shape[0] and count >= E.shape[0]:
                raise
            log.info('ADI stagnated with %d shifts; retrying with %d', count, 4 * count)
            count, steps = 4 * count, 4 * steps


def lradi_projected(E, A, PiB, ctx=None, shifts=None, opts=None, side='controllability', mu=None):
    """Low-rank ADI for ``E P A^T + A P E^T = -PiB PiB^T`` with ``P = Z Z^H``.

    Parameters
    ----------
    E, A
        Sparse pencil matrices evaluated at one parameter.
    PiB
        Right-hand side factor ``Pi_l B``; the caller applies the projector.
    ctx
        Projector context; after every step the right projector defect of the
        new block is checked and the block re-projected if it drifted.
    shifts
        :class:`ShiftSequence`; generated by :func:`generate_shifts` if
        omitted, and regenerated with more Ritz values if the iteration
        stagnates (``opts.shift_retries`` times).
    opts
        :class:`AdiOptions`.

    Returns
    -------
    LowRankFactor
        Real factor, compressed with ``opts.compression_tolerance``.
    """
    opts = opts or AdiOptions()
    PiB = np.atleast_2d(np.asarray(PiB, dtype=float))
    if PiB.shape[0] != E.shape[0]:
        PiB = PiB.reshape(E.shape[0], -1)

    def norm_fn(W):
        w = W[0]
        return float(np.linalg.norm(w.conj().T @ w))

    (Z,), history, it, shifts = _adi_auto(E, A, [PiB], ctx, shifts, opts, side, mu, norm_fn,
                                          _projector(ctx, side))
    Zr = compress_factor(Z, opts.compression_tolerance) if Z.shape[1] else Z.real
    return LowRankFactor(Zr, side, history, None if mu is None else np.atleast_1d(mu), shifts,
                         metadata={'iterations': it, 'raw_rank': Z.shape[1]})


def lradi_nonsymmetric(E, A, B_l, B_r, ctx=None, shifts=None, opts=None, side='controllability', mu=None):
    """Two-sided low-rank ADI for ``E X A^T + A X E^T = -B_l B_r^T`` with ``X = Z_l Z_r^H``.

    Both factors use the same shifts and coefficients, so their column spaces
    evolve together. The residual is ``W_l W_r^H`` with norm
    ``sqrt(tr((W_l^H W_l)(W_r^H W_r)))``.
    """
    opts = opts or AdiOptions()
    B_l = np.atleast_2d(np.asarray(B_l, dtype=float))
    B_r = np.atleast_2d(np.asarray(B_r, dtype=float))
    if B_l.shape != B_r.shape:
        raise ShapeError('left and right factors must have equal shapes')

    def norm_fn(W):
        gl = W[0].conj().T @ W[0]
        gr = W[1].conj().T @ W[1]
        return float(np.sqrt(max(np.real(np.trace(gl @ gr)), 0.0)))

    if np.linalg.norm(B_l) == 0 or np.linalg.norm(B_r) == 0:
        empty = np.zeros((E.shape[0], 0))
        return LowRankFactor(empty, side, [0.0], mu, shifts, Z_right=empty.copy())
    project = _projector(ctx, side)
    (Zl, Zr), history, it, shifts = _adi_auto(E, A, [B_l, B_r], ctx, shifts, opts, side, mu, norm_fn, project)
    Zl, Zr = compress_two_sided(Zl, Zr, opts.compression_tolerance)
    return LowRankFactor(Zl, side, history, None if mu is None else np.atleast_1d(mu), shifts,
                         Z_right=Zr, metadata={'iterations': it})


# --------------------------------------------------------------------------
# improper part


def smith_improper(E, A, B, ctx, nu, side='controllability', mu=None):
    """Factor of the improper Gramian by the finite Smith iteration.

    Returns ``Y = [Y_0, ..., Y_{nu-1}]`` with ``Y_0 = (I - Pi_r) A^{-1} B`` and
    ``Y_k = A^{-1} E Y_{k-1}``. ``Y Y^T`` solves

        A P A^T - E P E^T = (I - Pi_l) B B^T (I - Pi_l)^T,  P = (I - Pi_r) P (I - Pi_r)^T.

    Raises :class:`StructureError` if ``(A^{-1} E)^nu Y_0`` does not vanish.
    For the observability side pass the transposed pencil, ``C^T`` and the
    dual projector context.
    """
    E = sps.csc_matrix(E)
    A = sps.csc_matrix(A)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != E.shape[0]:
        raise ShapeError('B has the wrong number of rows')
    if nu < 1:
        raise ValueError('index must be at least 1')
    instrument.record('smith', A.shape[0])
    try:
        lu = spsla.splu(A)
    except RuntimeError as exc:
        raise FactorizationError('A is singular') from exc

    def solve(R):
        X = lu.solve(R)
        return X + lu.solve(R - A @ X)

    X = solve(B)
    Y = X - ctx.apply_pi_right(X)
    blocks = [Y]
    for _ in range(nu - 1):
        Y = solve(E @ Y)
        blocks.append(Y)
    witness = np.linalg.norm(solve(E @ Y))
    Yall = np.hstack(blocks)
    scale = max(np.linalg.norm(B), np.linalg.norm(Yall), 1e-300)
    if witness > NILPOTENCY_TOL * scale:
        raise StructureError(f'(A^-1 E)^nu does not annihilate the algebraic part '
                             f'(witness {witness:.2e}); index {nu} is too small')
    return LowRankFactor(Yall, side, [witness / scale], None if mu is None else np.atleast_1d(mu),
                         metadata={'nu': nu, 'block_size': B.shape[1]})


def improper_svd_matrix_index2(E11, A11, G, B1, B2, C1, C2):
    """Explicit ``S_i^T A R_i`` for an index-2 saddle-point system.

    With ``S = G^T E11^{-1} G``, ``B12 = B1 - A11 E11^{-1} G S^{-1} B2`` and
    ``B11 = C1 E11^{-1} G S^{-1} B2 + C2 S^{-1} G^T E11^{-1} B12`` the matrix is::

        [[B11,                C2 S^{-1} B2],
         [C2 S^{-1} B2, 0           ]]

    up to signs of the block rows, which do not affect the singular values.
    For ``E11 = I`` this reduces to the Gram matrix ``G^T G`` form.
    """
    E11 = sps.csc_matrix(E11)
    A11 = sps.csc_matrix(A11)
    G = _dense(G)
    B1, B2, C1, C2 = (np.atleast_2d(_dense(M)) for M in (B1, B2, C1, C2))
    lu = spsla.splu(E11)
    EinvG = lu.solve(G)
    S = G.T @ EinvG
    try:
        cho = spla.cho_factor(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError('G^T E11^{-1} G is singular') from exc
    SB2 = spla.cho_solve(cho, B2)
    B12 = B1 - A11 @ (EinvG @ SB2)
    B11 = C1 @ (EinvG @ SB2) + C2 @ spla.cho_solve(cho, EinvG.T @ B12)
    off = C2 @ SB2
    p, m = off.shape
    M = np.zeros((2 * p, 2 * m))
    M[:p, :m] = B11
    M[:p, m:] = off
    M[p:, :m] = off
    return M


def improper_product(E, A, Y, X):
    """``X^T A Y`` from improper Gramian factors (the improper Hankel matrix)."""
    return X.T @ (A @ Y)
