"""Balanced truncation of descriptor systems from low-rank Gramian factors.

Proper Hankel singular values come from ``S_p^T E R_p``, improper ones from
``S_i^T A R_i``, where ``P_p = R_p R_p^T`` and ``P_i = R_i R_i^T`` are the
proper and improper controllability Gramians and ``S_p``, ``S_i`` the
observability factors.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps

from rbbt.errors import ShapeError, StabilityError, TruncationError

log = logging.getLogger(__name__)

IMPROPER_ZERO_TOL = 1e-12
PROPER_RANK_TOL = 1e-13
GAP_TOL = 1e-10
BLOCK_DEFECT_TOL = 1e-8


@dataclass(frozen=True)
class TruncationRule:
    """``kind`` is ``'fixed_order'`` (value: r_p), ``'relative_threshold'``
    (value: tau, drop sigma_k / sigma_1 < tau) or ``'absolute_bound'``
    (value: eps, smallest r_p with 2 * tail <= eps)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ('fixed_order', 'relative_threshold', 'absolute_bound'):
            raise ValueError(f'unknown truncation rule {self.kind!r}')
        if not self.value > 0 and not (self.kind == 'fixed_order' and self.value == 0):
            raise ValueError('truncation parameter must be positive')

    def order(self, hankel):
        s = np.asarray(hankel, dtype=float)
        if s.size == 0:
            return 0
        if self.kind == 'fixed_order':
            return int(min(self.value, s.size))
        if self.kind == 'relative_threshold':
            return int(np.sum(s / s[0] >= self.value))
        tails = 2.0 * np.append(np.cumsum(s[::-1])[::-1], 0.0)
        return int(np.argmax(tails <= self.value))


@dataclass
class Rom:
    """Reduced descriptor system ``E_R x' = A_R x + B_R u``, ``y = C_R x``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    r_p: int
    r_i: int
    proper_hankel: np.ndarray
    improper_hankel: np.ndarray
    mu: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.E.shape[0]

    def transfer(self, s):
        return self.C @ np.linalg.solve(s * self.E - self.A, self.B.astype(complex))

    def error_bound(self):
        return bt_error_bound(self.proper_hankel, self.r_p)


def _svd_small(M):
    if M.size == 0:
        return np.zeros((M.shape[0], 0)), np.zeros(0), np.zeros((M.shape[1], 0))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return U, s, Vt.T


def proper_svd(S_p, R_p, E):
    """SVD ``S_p^T E R_p = U Sigma V^T`` of the small proper Hankel matrix."""
    S_p, R_p = np.asarray(S_p), np.asarray(R_p)
    if S_p.shape[0] != E.shape[0] or R_p.shape[0] != E.shape[0]:
        raise ShapeError('factors must have N rows')
    return _svd_small(S_p.T @ (E @ R_p))


def improper_svd(S_i, R_i, A):
    """SVD of ``S_i^T A R_i`` without its zero singular values.

    Values below ``1e-12 * max(sigma_max, ||S_i|| ||A R_i||)`` count as zero;
    the factor-norm term catches an improper Hankel matrix that vanishes by
    cancellation, where ``sigma_max`` itself is rounding noise.
    """
    S_i, R_i = np.asarray(S_i), np.asarray(R_i)
    if S_i.shape[0] != A.shape[0] or R_i.shape[0] != A.shape[0]:
        raise ShapeError('factors must have N rows')
    AR = A @ R_i
    U, s, V = _svd_small(S_i.T @ AR)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s[:0], V[:, :0]
    scale = max(s[0], np.linalg.norm(S_i) * np.linalg.norm(AR))
    r = int(np.sum(s > IMPROPER_ZERO_TOL * scale))
    return U[:, :r], s[:r], V[:, :r]


def bt_error_bound(proper_hankel, r_p):
    """``2 * sum_{j > r_p} sigma_j``."""
    s = np.asarray(proper_hankel, dtype=float)
    if r_p > s.size or r_p < 0:
        raise ValueError('order exceeds the number of Hankel values')
    return float(2.0 * np.sum(s[r_p:]))


def _resolve_cut(s, r):
    """Move the cut down until ``sigma_r / sigma_{r+1} > 1 + GAP_TOL``."""
    if r == 0 or r >= s.size:
        return r
    while r > 0 and s[r - 1] <= (1 + GAP_TOL) * s[r]:
        r -= 1
    if r == 0:
        raise TruncationError('no strict gap in the Hankel singular values below the requested order')
    return r


def build_rom(E, A, B, C, S_p, R_p, S_i=None, R_i=None, rule=None, ctx=None, mu=None):
    """Balanced truncation ROM from proper and improper Gramian factors.

    ``W_R = [S_p U_1 Sigma_1^{-1/2}, S_i U_i Sigma_i^{-1/2}]`` and
    ``T_R = [R_p V_1 Sigma_1^{-1/2}, R_i V_i Sigma_i^{-1/2}]`` give
    ``E_R = W_R^T E T_R = blkdiag(I, N_R)`` and ``A_R = blkdiag(J_R, I)``.

    Parameters
    ----------
    E, A, B, C
        Full-order matrices at one parameter.
    S_p, R_p
        Observability and controllability factors of the proper Gramians.
    S_i, R_i
        Improper factors; ``None`` for no improper part.
    rule
        :class:`TruncationRule` for the proper part (default: relative 1e-8).
    ctx
        Optional projector context, used to re-project the bases if the
        block structure defect exceeds ``1e-8``.
    """
    rule = rule or TruncationRule('relative_threshold', 1e-8)
    B = B.toarray() if sps.issparse(B) else np.asarray(B)
    C = C.toarray() if sps.issparse(C) else np.asarray(C)
    U, s, V = proper_svd(S_p, R_p, E)
    numerical = int(np.sum(s > PROPER_RANK_TOL * s[0])) if s.size else 0
    r_p = min(rule.order(s), numerical)
    if rule.kind == 'fixed_order' and rule.value > numerical:
        log.info('requested order %d exceeds the numerical rank %d', int(rule.value), numerical)
    r_p = _resolve_cut(s, r_p)
    if S_i is not None and R_i is not None and np.asarray(S_i).shape[1] and np.asarray(R_i).shape[1]:
        Ui, si, Vi = improper_svd(S_i, R_i, A)
    else:
        Ui, si, Vi = np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0))
    r_i = si.size
    N = E.shape[0]
    sp = s[:r_p] ** -0.5
    Wp = np.asarray(S_p) @ U[:, :r_p] * sp
    Tp = np.asarray(R_p) @ V[:, :r_p] * sp
    if r_i:
        Wi = np.asarray(S_i) @ Ui * si ** -0.5
        Ti = np.asarray(R_i) @ Vi * si ** -0.5
    else:
        Wi = Ti = np.zeros((N, 0))

    def assemble(Wp, Tp, Wi, Ti):
        W = np.hstack([Wp, Wi])
        T = np.hstack([Tp, Ti])
        return W.T @ (E @ T), W.T @ (A @ T), W.T @ B, C @ T

    ER, AR, BR, CR = assemble(Wp, Tp, Wi, Ti)
    defect = _block_defect(ER, AR, r_p)
    if defect > BLOCK_DEFECT_TOL and ctx is not None:
        log.warning('ROM block structure defect %.2e; re-projecting the bases', defect)
        dual = ctx.dual()
        Tp, Ti = ctx.apply_pi_right(Tp), Ti - ctx.apply_pi_right(Ti)
        Wp, Wi = dual.apply_pi_right(Wp), Wi - dual.apply_pi_right(Wi)
        ER, AR, BR, CR = assemble(Wp, Tp, Wi, Ti)
        defect = _block_defect(ER, AR, r_p)
    if defect > BLOCK_DEFECT_TOL:
        log.warning('ROM block structure defect %.2e remains above tolerance', defect)
    nil_defect = 0.0
    if r_i:
        ER, AR, BR, CR, nil_defect = _exact_nilpotent(ER, AR, BR, CR, r_p)
    J = AR[:r_p, :r_p]
    if r_p:
        ev = np.linalg.eigvals(np.linalg.solve(ER[:r_p, :r_p], J))
        if np.max(ev.real) >= 0:
            raise StabilityError(f'reduced proper block is unstable (max real part {np.max(ev.real):.3e})')
    meta = {'block_defect': float(defect), 'nilpotency_defect': nil_defect, 'numerical_proper_rank': numerical,
            'error_bound': bt_error_bound(s, r_p)}
    return Rom(ER, AR, BR, CR, r_p, r_i, s, si, None if mu is None else np.atleast_1d(mu), meta)


def _exact_nilpotent(ER, AR, BR, CR, r_p):
    """Rotate ``N_R`` to real Schur form and drop its diagonal and lower part.

    ``N_R`` is nilpotent only up to rounding, and ``(s N_R - I)^{-1}`` amplifies
    that rounding by powers of ``|s|``. An orthogonal rotation keeps
    ``A_R22 = I``; in Schur form the exact ``N_R`` is strictly upper triangular.
    """
    N = ER[r_p:, r_p:]
    T, Q = spla.schur(N, output='real')
    dropped = np.tril(T)
    nil_defect = float(np.linalg.norm(dropped) / max(np.linalg.norm(N), 1e-300))
    ER, AR, BR, CR = ER.copy(), AR.copy(), BR.copy(), CR.copy()
    ER[r_p:, r_p:] = T - dropped
    ER[:r_p, r_p:] = ER[:r_p, r_p:] @ Q
    ER[r_p:, :r_p] = Q.T @ ER[r_p:, :r_p]
    AR[r_p:, r_p:] = Q.T @ AR[r_p:, r_p:] @ Q
    AR[:r_p, r_p:] = AR[:r_p, r_p:] @ Q
    AR[r_p:, :r_p] = Q.T @ AR[r_p:, :r_p]
    BR[r_p:] = Q.T @ BR[r_p:]
    CR[:, r_p:] = CR[:, r_p:] @ Q
    return ER, AR, BR, CR, nil_defect


def _block_defect(ER, AR, r_p):
    scale = max(np.linalg.norm(ER), np.linalg.norm(AR), 1.0)
    if ER.shape[0] == 0:
        return 0.0
    off = [ER[:r_p, r_p:], ER[r_p:, :r_p], AR[:r_p, r_p:], AR[r_p:, :r_p],
           ER[:r_p, :r_p] - np.eye(r_p), AR[r_p:, r_p:] - np.eye(ER.shape[0] - r_p)]
    return max(np.linalg.norm(b) for b in off) / scale


def sigma_max_error(transfer_full, transfer_rom, omegas):
    """``sigma_max(G(i w) - G_R(i w))`` on a frequency grid."""
    return np.array([np.linalg.norm(transfer_full(1j * w) - transfer_rom(1j * w), 2) for w in omegas])
