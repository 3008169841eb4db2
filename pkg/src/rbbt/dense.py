"""Dense reference computations for small pencils.

These routines are deliberately independent of the sparse solvers and serve
as oracles in tests: the quasi-Weierstrass decomposition (generalized Schur
form plus block decoupling) and a Kronecker-product solve of projected
Lyapunov equations.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from rbbt.errors import FactorizationError, ShapeError, StructureError

QWF_MAX_SIZE = 200
KRON_MAX_SIZE = 200
KRON_MAX_FINITE = 70


def _dense(M):
    return M.toarray() if hasattr(M, 'toarray') else np.asarray(M, dtype=float)


@dataclass
class QuasiWeierstrass:
    """``E = W diag(I, Nnil) T`` and ``A = W diag(J, I) T``."""

    W: np.ndarray
    T: np.ndarray
    J: np.ndarray
    Nnil: np.ndarray
    nu: int

    @property
    def n_finite(self):
        return self.J.shape[0]

    @property
    def n_infinite(self):
        return self.Nnil.shape[0]

    def pi_left(self):
        D = np.zeros(self.W.shape[0])
        D[:self.n_finite] = 1.0
        return self.W @ np.diag(D) @ np.linalg.inv(self.W)

    def pi_right(self):
        D = np.zeros(self.T.shape[0])
        D[:self.n_finite] = 1.0
        return np.linalg.solve(self.T, np.diag(D) @ self.T)

    def markov_parameters(self, B, C, count=None):
        """``M_k = -C_2 Nnil^k B_2`` for ``k < count`` (default: the index)."""
        nf = self.n_finite
        B2 = np.linalg.solve(self.W, _dense(B))[nf:]
        C2 = (_dense(C) @ np.linalg.inv(self.T))[:, nf:]
        count = self.nu if count is None else count
        out = []
        X = B2
        for _ in range(count):
            out.append(-C2 @ X)
            X = self.Nnil @ X
        return out


def _infinite_mask(alpha, beta, n_infinite=None):
    ratio = np.abs(beta) / np.maximum(np.hypot(np.abs(alpha), np.abs(beta)), np.finfo(float).tiny)
    if n_infinite is not None:
        order = np.argsort(ratio)
        mask = np.zeros(ratio.size, dtype=bool)
        mask[order[:n_infinite]] = True
        return mask
    # split at the widest gap in log(ratio) below 1e-3; defective infinite
    # eigenvalues are only resolved to about eps**(1/nu)
    # ratios below 1e-20 are exact zeros up to rounding; clamp so that they do
    # not open a spurious gap inside the infinite cluster
    logs = np.sort(np.log10(np.maximum(ratio, 1e-20)))
    if logs[0] >= -3.0:
        return np.zeros(ratio.size, dtype=bool)
    if logs[-1] < -3.0:
        return np.ones(ratio.size, dtype=bool)
    gaps = np.diff(logs)
    gaps[logs[:-1] >= -3.0] = -np.inf
    cut = int(np.argmax(gaps))
    threshold = 0.5 * (logs[cut] + logs[cut + 1])
    return np.log10(np.maximum(ratio, 1e-20)) < threshold


def quasi_weierstrass_oracle(E, A, n_infinite=None):
    """Compute a quasi-Weierstrass form of a small regular pencil.

    Uses a reordered real generalized Schur form with finite eigenvalues
    first, then decouples the two diagonal blocks exactly by a triangular
    Stein recursion.

    Parameters
    ----------
    E, A
        Square matrices of size at most 200.
    n_infinite
        Number of infinite eigenvalues, if known. By default it is detected
        from the gap in ``|beta|/|alpha|``.

    Returns
    -------
    :class:`QuasiWeierstrass`
    """
    E = _dense(E)
    A = _dense(A)
    N = E.shape[0]
    if E.shape != (N, N) or A.shape != (N, N):
        raise ShapeError('E and A must be square and of equal size')
    if N > QWF_MAX_SIZE:
        raise ShapeError(f'dense decomposition limited to N <= {QWF_MAX_SIZE}')
    if N == 0:
        z = np.zeros((0, 0))
        return QuasiWeierstrass(z, z, z, z, 0)
    sE = max(np.linalg.norm(E, 1), 1e-300)
    sA = max(np.linalg.norm(A, 1), 1e-300)
    En, An = E / sE, A / sA
    AA, BB, alpha, beta, _, _ = spla.ordqz(An, En, output='real')
    if np.any((np.abs(alpha) < 1e-14) & (np.abs(beta) < 1e-14)):
        raise FactorizationError('pencil is singular (indeterminate generalized eigenvalue)')
    inf_mask = _infinite_mask(alpha, beta, n_infinite)
    n_inf = int(inf_mask.sum())
    nf = N - n_inf
    ratios = np.abs(beta) / np.maximum(np.hypot(np.abs(alpha), np.abs(beta)), 1e-300)
    if 0 < n_inf < N:
        thr = 0.5 * (np.max(ratios[inf_mask]) + np.min(ratios[~inf_mask]))
    elif n_inf == N:
        thr = np.inf
    else:
        thr = -1.0

    def finite_first(a, b):
        r = np.abs(b) / np.maximum(np.hypot(np.abs(a), np.abs(b)), 1e-300)
        return r > thr

    AA, BB, alpha, beta, Q, Z = spla.ordqz(An, En, sort=finite_first, output='real')
    AA = AA * sA
    BB = BB * sE
    A11, A12, A22 = AA[:nf, :nf], AA[:nf, nf:], AA[nf:, nf:]
    B11, B12, B22 = BB[:nf, :nf], BB[:nf, nf:], BB[nf:, nf:]
    if nf and np.linalg.cond(B11) > 1e13:
        raise FactorizationError('finite block of E is numerically singular; index detection failed')
    if n_inf and np.linalg.cond(A22) > 1e13:
        raise FactorizationError('infinite block of A is numerically singular; index detection failed')
    J = np.linalg.solve(B11, A11) if nf else np.zeros((0, 0))
    Nnil = np.linalg.solve(A22, B22) if n_inf else np.zeros((0, 0))
    # decouple: find X, Y with A11 Y + X A22 = -A12 and B11 Y + X B22 = -B12,
    # equivalently Y - J Y Nnil = B11^{-1}(A12 Nnil - B12); Nnil is upper triangular
    Y = np.zeros((nf, n_inf))
    if nf and n_inf:
        rhs = np.linalg.solve(B11, A12 @ Nnil - B12)
        I = np.eye(nf)
        for j in range(n_inf):
            c = rhs[:, j] + J @ (Y[:, :j] @ Nnil[:j, j])
            Y[:, j] = np.linalg.solve(I - Nnil[j, j] * J, c)
        X = -(A12 + A11 @ Y) @ np.linalg.inv(A22)
    else:
        X = np.zeros((nf, n_inf))
    Linv = np.eye(N)
    Linv[:nf, nf:] = -X
    Rinv = np.eye(N)
    Rinv[:nf, nf:] = -Y
    D = np.zeros((N, N))
    D[:nf, :nf] = B11
    D[nf:, nf:] = A22
    W = Q @ Linv @ D
    T = Rinv @ Z.T
    nu = 0
    if n_inf:
        scale = max(np.linalg.norm(Nnil), 1.0)
        P = np.eye(n_inf)
        nu = None
        for k in range(1, n_inf + 1):
            P = P @ Nnil
            if np.linalg.norm(P) <= 1e-6 * scale ** k:
                nu = k
                break
        if nu is None:
            raise StructureError('infinite block is not nilpotent to working accuracy')
    return QuasiWeierstrass(W, T, J, Nnil, nu)


def orth_range(M, tol=1e-10):
    """Orthonormal basis of the range of a small dense matrix via SVD."""
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    r = int(np.sum(s > tol * s[0]))
    return U[:, :r]


def dense_projected_lyap_oracle(E, A, PiB, Pi_r, rhs_right=None):
    """Solve ``E P A^T + A P E^T = -PiB PiB^T`` with ``P = Pi_r P Pi_r^T``.

    The Kronecker form ``-(A kron E + E kron A) vec(P) = vec(PiB PiB^T)`` is
    singular; it is restricted to the range of ``Pi_r kron Pi_r`` using an
    orthonormal basis ``Q`` of range(Pi_r), and tested against an orthonormal
    basis of range(E Q), which is the range of the left projector. The
    resulting square system is the least-squares solution on the projected
    subspace.

    Parameters
    ----------
    E, A
        Small dense pencil matrices (N <= 200).
    PiB
        Projected right-hand side factor.
    Pi_r
        Dense right spectral projector.
    rhs_right
        If given, solve with the nonsymmetric right-hand side ``PiB rhs_right^T``.
    """
    E = _dense(E)
    A = _dense(A)
    Pi_r = _dense(Pi_r)
    PiB = np.atleast_2d(np.asarray(PiB))
    N = E.shape[0]
    if N > KRON_MAX_SIZE:
        raise ShapeError(f'Kronecker oracle limited to N <= {KRON_MAX_SIZE}')
    Br = PiB if rhs_right is None else np.atleast_2d(np.asarray(rhs_right))
    Q = orth_range(Pi_r)
    nf = Q.shape[1]
    if nf == 0:
        return np.zeros((N, N))
    if nf > KRON_MAX_FINITE:
        raise ShapeError(f'Kronecker oracle limited to {KRON_MAX_FINITE} finite eigenvalues')
    Ql = orth_range(E @ Q)
    if Ql.shape[1] != nf:
        raise FactorizationError('E is not injective on the right deflating subspace')
    Ef = Ql.T @ E @ Q
    Af = Ql.T @ A @ Q
    L = -(np.kron(Af, Ef) + np.kron(Ef, Af))
    rhs = Ql.T @ (PiB @ Br.conj().T) @ Ql
    # column-major vec: vec(X M^T) convention matches kron(M, X)
    y = np.linalg.solve(L, rhs.reshape(-1, order='F'))
    Pf = y.reshape(nf, nf, order='F')
    P = Q @ Pf @ Q.T
    if rhs_right is None:
        P = 0.5 * (P + P.T)
    return np.real_if_close(P)


def dense_projectors(E, A, n_infinite=None):
    """Spectral projectors ``(Pi_l, Pi_r)`` from the quasi-Weierstrass form."""
    qwf = quasi_weierstrass_oracle(E, A, n_infinite)
    return qwf.pi_left(), qwf.pi_right(), qwf
