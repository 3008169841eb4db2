import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from rbbt.errors import DomainError, FallbackRequired, ShapeError, StructureError
from rbbt.param_system import (AffineMatrixOperator, DaeInstance, GeneralSmall, Mechanical,
                               ParametricDaeSystem, StokesLike, _transfer, evaluate_operator,
                               kind_from_dict, precompute_smw, transfer_function,
                               transfer_function_smw)
from rbbt.theta import (AffineShift, Callback, Coordinate, One, Power, Product, Scale, Sum,
                        theta_from_dict)


def scalar_system(e=1.0, a=-1.0):
    return ParametricDaeSystem(AffineMatrixOperator.constant([[e]]), AffineMatrixOperator.constant([[a]]),
                               AffineMatrixOperator.constant([[1.0]]), AffineMatrixOperator.constant([[1.0]]),
                               [[0.0, 1.0]])


def random_lowrank_system(rng, N=12, rank=2):
    """Stable random system with two parametric rank-``rank`` terms in A and one in E."""
    Q = rng.standard_normal((N, N))
    A0 = -(Q @ Q.T + N * np.eye(N))
    E0 = np.eye(N)
    factors = [(rng.standard_normal((N, rank)), rng.standard_normal((N, rank))) for _ in range(3)]
    A = AffineMatrixOperator([(One(), A0), (Coordinate(0), factors[0][0] @ factors[0][1].T),
                              (Coordinate(1), factors[1][0] @ factors[1][1].T)],
                             lowrank={1: factors[0], 2: factors[1]})
    E = AffineMatrixOperator([(One(), E0), (Scale(0.1, Coordinate(0)), factors[2][0] @ factors[2][1].T)],
                             lowrank={1: factors[2]})
    B = AffineMatrixOperator([(One(), rng.standard_normal((N, 2))), (Coordinate(1), rng.standard_normal((N, 2)))])
    C = AffineMatrixOperator.constant(rng.standard_normal((3, N)))
    return ParametricDaeSystem(E, A, B, C, [[0.1, 0.3], [0.1, 0.3]])


class TestTheta:
    def test_elementary_values(self):
        mu = np.array([2.0, 3.0])
        assert One()(mu) == 1.0
        assert Coordinate(1)(mu) == 3.0
        assert Scale(-2.0, Coordinate(0))(mu) == -4.0
        assert Power(Coordinate(0), 3)(mu) == 8.0
        assert Product((Coordinate(0), Coordinate(1)))(mu) == 6.0
        assert Sum((One(), Coordinate(1)))(mu) == 4.0
        assert AffineShift(0.5, Coordinate(0))(mu) == 2.5

    def test_power_needs_positive_integer_exponent(self):
        with pytest.raises((ValueError, TypeError)):
            Power(Coordinate(0), 0)

    def test_dict_round_trip(self):
        expr = Sum((Product((Coordinate(0), Power(Coordinate(1), 2))), AffineShift(-1.0, Scale(3.0, One()))))
        back = theta_from_dict(expr.to_dict())
        mu = np.array([0.7, 1.3])
        assert back(mu) == pytest.approx(expr(mu))
        assert back.to_dict() == expr.to_dict()

    def test_callback_is_not_serializable(self):
        cb = Callback(lambda mu: mu[0] ** 0.5, 'sqrt')
        assert cb(np.array([4.0])) == pytest.approx(2.0)
        with pytest.raises(TypeError):
            cb.to_dict()


class TestAffineOperator:
    def test_constant_operator_is_parameter_independent(self):
        op = AffineMatrixOperator.constant(np.eye(3))
        assert not op.parametric
        assert np.array_equal(op.evaluate(np.array([0.3])).toarray(), np.eye(3))

    def test_single_parametric_term(self):
        A1 = np.array([[1.0, 2.0], [3.0, 4.0]])
        op = AffineMatrixOperator([(One(), np.zeros((2, 2))), (Coordinate(0), A1)])
        assert op.parametric
        assert np.allclose(op.evaluate(np.array([0.65])).toarray(), 0.65 * A1)

    def test_matches_dense_summation(self, rng):
        mats = [rng.standard_normal((5, 5)) for _ in range(3)]
        thetas = [One(), Coordinate(0), Product((Coordinate(0), Coordinate(1)))]
        op = AffineMatrixOperator(list(zip(thetas, mats)))
        mu = np.array([0.4, -1.2])
        dense = sum(t(mu) * M for t, M in zip(thetas, mats))
        assert np.allclose(op.evaluate(mu).toarray(), dense, atol=1e-14)

    def test_first_term_must_be_one(self):
        with pytest.raises(StructureError):
            AffineMatrixOperator([(Coordinate(0), np.eye(2))])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            AffineMatrixOperator([(One(), np.eye(2)), (Coordinate(0), np.eye(3))])

    def test_lowrank_must_reproduce_term(self):
        u = np.ones((2, 1))
        with pytest.raises(StructureError):
            AffineMatrixOperator([(One(), np.eye(2)), (Coordinate(0), np.eye(2))], lowrank={1: (u, u)})

    def test_transpose_and_scale(self, rng):
        M0, M1 = rng.standard_normal((2, 4, 4))
        op = AffineMatrixOperator([(One(), M0), (Coordinate(0), M1)])
        mu = np.array([0.9])
        assert np.allclose(op.transpose().evaluate(mu).toarray(), op.evaluate(mu).toarray().T)
        assert np.allclose(op.scaled(-2.0).evaluate(mu).toarray(), -2.0 * op.evaluate(mu).toarray())

    def test_domain_and_shape_checks(self):
        op = AffineMatrixOperator.constant(np.eye(2))
        with pytest.raises(DomainError):
            evaluate_operator(op, [2.0], [[0.0, 1.0]])
        with pytest.raises(ShapeError):
            evaluate_operator(op, [0.5, 0.5], [[0.0, 1.0]])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_affine_in_coefficients(self, a, b, c, d):
        M0 = np.array([[1.0, 2.0], [0.0, 1.0]])
        M1 = np.array([[0.0, 1.0], [1.0, 0.0]])
        M2 = np.array([[3.0, 0.0], [0.0, -1.0]])
        op = AffineMatrixOperator([(One(), M0), (Coordinate(0), M1), (Coordinate(1), M2)])
        lhs = op.evaluate(np.array([a + c, b + d])).toarray()
        rhs = op.evaluate(np.array([a, b])).toarray() + op.evaluate(np.array([c, d])).toarray() - M0
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestSystem:
    def test_kind_round_trip(self):
        for kind in (StokesLike(3, 2), Mechanical(4, 1), GeneralSmall()):
            assert kind_from_dict(kind.to_dict()) == kind
        with pytest.raises(ValueError):
            kind_from_dict({'type': 'unknown'})

    def test_layout_must_match_size(self):
        op = AffineMatrixOperator.constant(np.eye(4))
        b = AffineMatrixOperator.constant(np.ones((4, 1)))
        with pytest.raises(StructureError):
            ParametricDaeSystem(op, op, b, b.transpose(), [[0, 1]], kind=StokesLike(2, 1))

    def test_scalar_transfer_at_zero(self):
        assert transfer_function(scalar_system(), [0.5], 0.0)[0, 0] == pytest.approx(1.0)

    def test_purely_algebraic_transfer(self):
        # E = 0, A = 1: G(s) = C (-A)^{-1} B = -1 for every s
        sys = scalar_system(e=0.0, a=1.0)
        for s in (0.0, 1j, 10.0 + 3j):
            assert transfer_function(sys, [0.5], s)[0, 0] == pytest.approx(-1.0)

    def test_stokes_transfer_matches_dense_solve(self, stokes_improper):
        sys, _ = stokes_improper
        mu = np.array([1.1])
        inst = sys.at(mu)
        s = 2.0j
        dense = inst.C @ np.linalg.solve((s * inst.E - inst.A).toarray(), inst.B)
        assert np.allclose(transfer_function(sys, mu, s), dense, rtol=1e-9, atol=1e-12)

    def test_dual_instance(self, rng):
        E = sps.csc_matrix(np.eye(3))
        A = sps.csc_matrix(-np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
        inst = DaeInstance(E, A, rng.standard_normal((3, 2)), rng.standard_normal((1, 3)), np.array([0.0]))
        dual = inst.transposed()
        assert dual.dual and not dual.transposed().dual
        assert np.allclose(dual.transfer(0.5j), inst.transfer(0.5j).T)

    def test_regularity_check(self):
        assert scalar_system().check_regularity([[0.5]], rng=0)
        assert not scalar_system(e=0.0, a=0.0).check_regularity([[0.5]], rng=0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-50, 50), st.floats(0.01, 50))
    def test_conjugate_symmetry(self, re, im):
        sys = scalar_system(e=2.0, a=-3.0)
        s = complex(re, im)
        assert transfer_function(sys, [0.5], s.conjugate()) == pytest.approx(np.conj(transfer_function(sys, [0.5], s)))


class TestWoodbury:
    def test_matches_direct_solve(self, rng):
        sys = random_lowrank_system(rng)
        omegas = np.array([0.3, 0.5, 20.0])
        pre = precompute_smw(sys, omegas)
        for mu in ([0.1, 0.3], [0.25, 0.15]):
            for i, w in enumerate(omegas):
                direct = transfer_function(sys, mu, 1j * w)
                assert np.allclose(transfer_function_smw(pre, mu, i), direct, rtol=1e-10, atol=1e-12)

    def test_vanishing_coefficient_requires_fallback(self, rng):
        sys = random_lowrank_system(rng)
        sys.param_box[:, 0] = 0.0
        pre = precompute_smw(sys, [1.0])
        with pytest.raises(FallbackRequired):
            transfer_function_smw(pre, [0.0, 0.2], 0)

    def test_missing_lowrank_factors(self):
        A = AffineMatrixOperator([(One(), -np.eye(2)), (Coordinate(0), np.eye(2))])
        I = AffineMatrixOperator.constant(np.eye(2))
        sys = ParametricDaeSystem(I, A, I, I, [[0, 1]])
        with pytest.raises(StructureError):
            precompute_smw(sys, [1.0])

    def test_private_transfer_counts_factorizations(self):
        from rbbt import instrument
        instrument.reset()
        _transfer(sps.eye(2, format='csc'), -sps.eye(2, format='csc'), np.ones((2, 1)), np.ones((1, 2)), 1.0)
        assert instrument.pencil_factorizations['transfer'] == 1
