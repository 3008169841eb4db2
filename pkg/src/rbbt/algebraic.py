"""Polynomial part of descriptor transfer functions.

For a system of index ``nu`` the transfer function splits into a strictly
proper part and a polynomial ``sum_k M_k s^k`` with ``k < nu``. The Markov
parameters ``M_k`` are estimated from samples at large imaginary
frequencies and realized as a small nilpotent descriptor block.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from rbbt.balanced_truncation import Rom
from rbbt.errors import ShapeError
from rbbt.param_system import StokesLike

log = logging.getLogger(__name__)

CONSISTENCY_WARN = 1e-4


@dataclass
class MarkovSet:
    """``M[k]`` for ``k = 0 .. nu-1`` with sampling data and consistency estimates."""

    M: list
    omegas: list
    consistency: list = field(default_factory=list)

    @property
    def nu(self):
        return len(self.M)

    def polynomial(self, s):
        return sum(Mk * s ** k for k, Mk in enumerate(self.M))

    def to_dict(self):
        return {'M': [np.asarray(m).tolist() for m in self.M], 'omegas': list(map(float, self.omegas)),
                'consistency': list(map(float, self.consistency))}


def spectral_scale(E, A, kind=None):
    """``||A_11||_1 / ||E_11||_1`` on the differential block (whole matrices otherwise)."""
    if isinstance(kind, StokesLike):
        n = kind.n
        E, A = E[:n, :n], A[:n, :n]
    ne = spsla.norm(E, 1) if sps.issparse(E) else np.linalg.norm(E, 1)
    na = spsla.norm(A, 1) if sps.issparse(A) else np.linalg.norm(A, 1)
    return na / ne if ne > 0 else max(na, 1.0)


def _markov_from_samples(G, nu, w1):
    if nu == 1:
        return [G(w1).real]
    g1 = G(w1)
    if nu == 2:
        return [g1.real, g1.imag / w1]
    w2 = 2.0 * w1
    g2 = G(w2)
    M2 = (g1 - g2).real / (w2 ** 2 - w1 ** 2)
    M1 = g1.imag / w1
    M0 = g1.real + w1 ** 2 * M2
    return [M0, M1, M2]


def estimate_markov(transfer, nu, omega_base=None, scale=1.0, check=True, zero_scale=0.0):
    """Markov parameters from samples of ``G(i w)`` at large ``w``.

    Parameters
    ----------
    transfer
        Callable ``s -> G(s)`` (p x m).
    nu
        Index, 1 to 3.
    omega_base
        Base frequency; default ``1e6 * scale`` for ``nu <= 2`` and
        ``1e4 * scale`` for ``nu = 3``, where rounding in
        ``M_0 = Re G + w^2 M_2`` grows like ``w^2``.
    scale
        Spectral scale of the proper part, see :func:`spectral_scale`.
    check
        Repeat the estimate at ``4 * omega_base`` and warn if the relative
        change exceeds ``1e-4``.
    zero_scale
        Typically ``||C|| ||B||``; estimates below ``1e-8 * zero_scale`` at
        both frequencies count as zero and are not checked.

    Index 1 uses ``M_0 = Re G(i w)``: the strictly proper remainder has an
    imaginary part of order ``1/w`` while its real part decays like ``1/w^2``.
    """
    if nu not in (1, 2, 3):
        raise ValueError('index must be 1, 2 or 3')
    if omega_base is None:
        omega_base = (1e4 if nu == 3 else 1e6) * scale

    def G(w):
        return np.atleast_2d(np.asarray(transfer(1j * w)))

    M = _markov_from_samples(G, nu, omega_base)
    omegas = [omega_base] if nu < 3 else [omega_base, 2 * omega_base]
    consistency = []
    if check:
        M4 = _markov_from_samples(G, nu, 4 * omega_base)
        for k, (a, b) in enumerate(zip(M, M4)):
            ref = max(np.linalg.norm(a), np.linalg.norm(b))
            rel = np.linalg.norm(a - b) / ref if ref > 1e-8 * zero_scale and ref > 0 else 0.0
            consistency.append(float(rel))
        worst = max(consistency)
        if worst > CONSISTENCY_WARN:
            warnings.warn(f'Markov parameter estimates change by {worst:.1e} between omega and 4 omega; '
                          f'consider a larger omega_base than {omega_base:.3e}', RuntimeWarning)
    return MarkovSet(M, omegas, consistency)


@dataclass
class PolynomialRealization:
    """Nilpotent realization ``C_hat (s E_hat - I)^{-1} B_hat = sum_k M_k s^k``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    blocks: list
    ranks: list

    @property
    def order(self):
        return self.E.shape[0]

    def transfer(self, s):
        if self.order == 0:
            return np.zeros((self.C.shape[0], self.B.shape[1]), dtype=complex)
        return self.C @ np.linalg.solve(s * self.E - self.A, self.B.astype(complex))


def _compact_svd(M, rank_tol):
    U, s, Vt = np.linalg.svd(np.atleast_2d(M), full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s[:0], Vt[:0]
    r = int(np.sum(s > rank_tol * s[0]))
    return U[:, :r], s[:r], Vt[:r]


def realize_polynomial(markov, rank_tol=1e-10, p=None, m=None):
    """Block-diagonal nilpotent realization of the Markov parameters.

    For ``M_k = U_k Sigma_k V_k^T`` of rank ``r_k`` the degree-``k`` block has
    ``(k+1) r_k`` states: ``E_hat_k`` carries ``Sigma_k^{1/k}`` on its ``k``
    block superdiagonals, ``B_hat_k = [0; ...; V_k^T]`` and
    ``C_hat_k = [-U_k, 0, ..., 0]``, so that ``E_hat_k^k`` has only the
    corner block ``Sigma_k``. ``M_0`` becomes a block with ``E = 0``, ``A = I``.
    """
    M = [np.atleast_2d(np.asarray(Mk, dtype=float)) for Mk in
         (markov.M if isinstance(markov, MarkovSet) else markov)]
    if not M:
        if p is None or m is None:
            raise ShapeError('empty Markov set needs explicit p and m')
        M = [np.zeros((p, m))]
    p, m = M[0].shape
    Es, Cs, Bs, blocks, ranks = [], [], [], [], []
    for k, Mk in enumerate(M):
        if Mk.shape != (p, m):
            raise ShapeError('Markov parameters must share their shape')
        U, s, Vt = _compact_svd(Mk, rank_tol)
        r = s.size
        ranks.append(r)
        if r == 0:
            continue
        if k == 0:
            Es.append(np.zeros((r, r)))
            Cs.append(-U)
            Bs.append(s[:, None] * Vt)
            blocks.append((0, r))
            continue
        size = (k + 1) * r
        Ek = np.zeros((size, size))
        root = np.diag(s ** (1.0 / k))
        for j in range(k):
            Ek[j * r:(j + 1) * r, (j + 1) * r:(j + 2) * r] = root
        Ck = np.zeros((p, size))
        Ck[:, :r] = -U
        Bk = np.zeros((size, m))
        Bk[k * r:, :] = Vt
        Es.append(Ek)
        Cs.append(Ck)
        Bs.append(Bk)
        blocks.append((k, size))
    order = sum(e.shape[0] for e in Es)
    E = np.zeros((order, order))
    off = 0
    for e in Es:
        E[off:off + e.shape[0], off:off + e.shape[0]] = e
        off += e.shape[0]
    C = np.hstack(Cs) if Cs else np.zeros((p, 0))
    B = np.vstack(Bs) if Bs else np.zeros((0, m))
    return PolynomialRealization(E, np.eye(order), B, C, blocks, ranks)


def combine_rom(rom, alg):
    """Append the algebraic realization to the proper ROM block-diagonally."""
    if rom.B.shape[1] != alg.B.shape[1] or rom.C.shape[0] != alg.C.shape[0]:
        raise ShapeError('proper and algebraic parts have different input/output dimensions')
    r, a = rom.order, alg.order
    E = np.zeros((r + a, r + a))
    A = np.zeros((r + a, r + a))
    E[:r, :r], A[:r, :r] = rom.E, rom.A
    E[r:, r:], A[r:, r:] = alg.E, alg.A
    B = np.vstack([rom.B, alg.B])
    C = np.hstack([rom.C, alg.C])
    meta = dict(rom.metadata, algebraic_order=a, algebraic_ranks=alg.ranks)
    return Rom(E, A, B, C, rom.r_p, rom.r_i + a, rom.proper_hankel, rom.improper_hankel, rom.mu, meta)
