import numpy as np
import pytest
import scipy.linalg as spla
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rbbt.errors import ShapeError, StabilityError, TruncationError
from rbbt.balanced_truncation import (TruncationRule, build_rom, bt_error_bound, improper_svd,
                                      proper_svd, sigma_max_error)
from rbbt.lyapunov import lradi_projected, smith_improper
from rbbt.projectors import build_projector_context

OMEGAS = np.logspace(-3, 3, 40)


def psd_factor(P):
    w, U = np.linalg.eigh(0.5 * (P + P.T))
    keep = w > 1e-15 * w.max()
    return U[:, keep] * np.sqrt(w[keep])


def random_ode(rng, N=12, m=2, p=2):
    Q = rng.standard_normal((N, N))
    A = -(Q @ Q.T / N + 0.1 * np.eye(N)) + 0.5 * (lambda W: W - W.T)(rng.standard_normal((N, N)))
    B = rng.standard_normal((N, m))
    C = rng.standard_normal((p, N))
    R = psd_factor(spla.solve_continuous_lyapunov(A, -B @ B.T))
    S = psd_factor(spla.solve_continuous_lyapunov(A.T, -C.T @ C))
    return np.eye(N), A, B, C, R, S


def tf(E, A, B, C):
    return lambda s: C @ np.linalg.solve(s * E - A, B.astype(complex))


class TestSvd:
    def test_empty_factors(self):
        U, s, V = proper_svd(np.zeros((3, 0)), np.zeros((3, 2)), np.eye(3))
        assert s.size == 0 and U.shape == (0, 0) and V.shape == (2, 0)

    def test_scalar(self):
        _, s, _ = proper_svd(np.ones((1, 1)), np.ones((1, 1)), np.eye(1))
        assert s.tolist() == [1.0]

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            proper_svd(np.ones((2, 1)), np.ones((3, 1)), np.eye(3))
        with pytest.raises(ShapeError):
            improper_svd(np.ones((3, 1)), np.ones((2, 1)), np.eye(3))

    def test_improper_svd_drops_cancelled_values(self):
        S = np.array([[1.0], [1.0]])
        R = np.array([[1.0], [-1.0]])
        _, s, _ = improper_svd(S, R, np.eye(2))
        assert s.size == 0


class TestErrorBound:
    def test_values(self):
        assert bt_error_bound([1.0, 0.1, 0.01], 1) == pytest.approx(0.22)
        assert bt_error_bound([1.0, 0.1, 0.01], 3) == 0.0
        with pytest.raises(ValueError):
            bt_error_bound([1.0], 2)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 10), elements=st.floats(1e-6, 10.0)))
    def test_monotone_tail(self, s):
        s = np.sort(s)[::-1]
        bounds = [bt_error_bound(s, r) for r in range(s.size + 1)]
        assert all(b1 >= b2 for b1, b2 in zip(bounds, bounds[1:]))
        for r in range(s.size):
            assert bounds[r] >= 2 * s[r]


class TestRules:
    def test_rule_orders(self):
        s = np.array([1.0, 0.5, 1e-3, 1e-9])
        assert TruncationRule('fixed_order', 2).order(s) == 2
        assert TruncationRule('fixed_order', 10).order(s) == 4
        assert TruncationRule('relative_threshold', 1e-4).order(s) == 3
        assert TruncationRule('absolute_bound', 0.01).order(s) == 2
        assert TruncationRule('absolute_bound', 1e-12).order(s) == 4
        assert TruncationRule('fixed_order', 0).order(s) == 0
        assert TruncationRule('relative_threshold', 0.1).order([]) == 0

    @pytest.mark.parametrize('kind, value', [('median', 1.0), ('relative_threshold', 0.0),
                                             ('absolute_bound', -1.0)])
    def test_invalid_rules(self, kind, value):
        with pytest.raises(ValueError):
            TruncationRule(kind, value)


class TestBuildRom:
    def test_full_order_reproduces_system(self, rng):
        E, A, B, C, R, S = random_ode(rng)
        rom = build_rom(E, A, B, C, S, R, rule=TruncationRule('relative_threshold', 1e-14))
        assert rom.r_i == 0
        err = sigma_max_error(tf(E, A, B, C), rom.transfer, OMEGAS)
        assert err.max() <= 1e-8 * max(np.linalg.norm(tf(E, A, B, C)(0), 2), 1.0)

    def test_balanced_realization(self, rng):
        E, A, B, C, R, S = random_ode(rng)
        rom = build_rom(E, A, B, C, S, R, rule=TruncationRule('fixed_order', 4))
        P = spla.solve_continuous_lyapunov(rom.A, -rom.B @ rom.B.T)
        Q = spla.solve_continuous_lyapunov(rom.A.T, -rom.C.T @ rom.C)
        assert np.allclose(rom.E, np.eye(4), atol=1e-10)
        # truncating a balanced realization keeps it balanced
        Sigma = np.diag(rom.proper_hankel[:4])
        assert np.allclose(P, Sigma, atol=1e-8 * rom.proper_hankel[0])
        assert np.allclose(Q, Sigma, atol=1e-8 * rom.proper_hankel[0])

    @pytest.mark.parametrize('order', [1, 2, 4, 6])
    def test_error_within_bound(self, rng, order):
        E, A, B, C, R, S = random_ode(rng)
        rom = build_rom(E, A, B, C, S, R, rule=TruncationRule('fixed_order', order))
        err = sigma_max_error(tf(E, A, B, C), rom.transfer, np.concatenate([[0.0], OMEGAS]))
        assert err.max() <= rom.error_bound() * (1 + 1e-8) + 1e-12
        assert rom.order == rom.r_p <= order

    def test_equal_values_cannot_be_split(self):
        E = np.eye(3)
        A = -np.eye(3)
        B = np.eye(3)
        with pytest.raises(TruncationError):
            build_rom(E, A, B, B, np.eye(3), np.eye(3), rule=TruncationRule('fixed_order', 1))

    def test_cut_moves_below_repeated_value(self):
        E, A = np.eye(3), -np.diag([1.0, 2.0, 3.0])
        S = R = np.diag([2.0, 1.0, 1.0])
        rom = build_rom(E, A, np.eye(3), np.eye(3), S, R, rule=TruncationRule('fixed_order', 2))
        assert rom.r_p == 1

    def test_unstable_projection_is_rejected(self):
        E, A = np.eye(2), np.diag([1.0, 2.0])
        with pytest.raises(StabilityError):
            build_rom(E, A, np.eye(2), np.eye(2), np.eye(2), np.diag([2.0, 1.0]))

    def test_improper_stokes_rom(self, stokes_improper):
        sys, _ = stokes_improper
        mu = np.array([0.9])
        inst = sys.at(mu)
        ctx = build_projector_context(inst)
        dual = inst.transposed()
        R = lradi_projected(inst.E, inst.A, ctx.apply_pi_left(inst.B), ctx).Z
        S = lradi_projected(dual.E, dual.A, ctx.dual().apply_pi_left(dual.B), ctx.dual()).Z
        Y = smith_improper(inst.E, inst.A, inst.B, ctx, 2).Z
        X = smith_improper(dual.E, dual.A, dual.B, ctx.dual(), 2).Z
        rom = build_rom(inst.E, inst.A, inst.B, inst.C, S, R, X, Y,
                        TruncationRule('relative_threshold', 1e-12), ctx, mu)
        assert rom.r_i > 0
        assert rom.metadata['block_defect'] <= 1e-8
        # E_R = blkdiag(I, N_R) with nilpotent N_R, A_R = blkdiag(J_R, I)
        Nr = rom.E[rom.r_p:, rom.r_p:]
        assert np.allclose(np.linalg.matrix_power(Nr, 2), 0.0, atol=1e-12)
        assert np.allclose(rom.A[rom.r_p:, rom.r_p:], np.eye(rom.r_i), atol=1e-8)
        full = lambda s: inst.transfer(s)
        err = sigma_max_error(full, rom.transfer, np.concatenate([OMEGAS, [1e5]]))
        assert err.max() <= rom.error_bound() + 1e-8 * np.linalg.norm(full(0.0), 2)

    def test_improper_part_ignored_without_factors(self, rng):
        E, A, B, C, R, S = random_ode(rng)
        rom = build_rom(E, A, B, C, S, R, np.zeros((12, 0)), np.zeros((12, 0)))
        assert rom.r_i == 0 and rom.improper_hankel.size == 0


def test_sigma_max_error_of_identical_models():
    f = lambda s: np.array([[1.0 / (s + 1.0)]])
    assert np.array_equal(sigma_max_error(f, f, [0.0, 1.0]), [0.0, 0.0])
