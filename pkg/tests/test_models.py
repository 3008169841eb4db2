import numpy as np
import pytest
import scipy.sparse as sps

from rbbt.dense import quasi_weierstrass_oracle
from rbbt.lyapunov import smith_improper
from rbbt.models import (StokesConfig, TripleChainConfig, make_stokes, make_triple_chain, stokes_matrices,
                         triple_chain_matrices)
from rbbt.param_system import Mechanical, StokesLike
from rbbt.projectors import build_projector_context, first_order_sd_realization


class TestStokes:
    def test_default_dimensions(self, stokes_proper):
        sys, st_ = stokes_proper
        assert (st_.n, st_.q, sys.N) == (49, 29, 78)
        assert sys.kind == StokesLike(49, 29) and sys.index == 2
        assert sys.m == sys.p == 1 and sys.d == 1

    def test_structural_properties(self, stokes_proper):
        _, st_ = stokes_proper
        E = st_.E.evaluate([1.0]).toarray()
        A = st_.A.evaluate([1.0]).toarray()
        G = st_.G.evaluate([1.0]).toarray()
        assert np.allclose(E, E.T) and np.linalg.eigvalsh(E)[0] > 0
        assert np.allclose(A, A.T) and np.linalg.eigvalsh(A)[-1] < 0
        assert np.linalg.matrix_rank(G) == G.shape[1]

    def test_viscosity_scales_laplacian(self, stokes_proper):
        _, st_ = stokes_proper
        A1 = st_.A.evaluate([1.0]).toarray()
        assert np.allclose(st_.A.evaluate([0.65]).toarray(), 0.65 * A1)

    def test_proper_variant_has_no_improper_hankel_values(self, stokes_proper):
        sys, _ = stokes_proper
        assert not sys.metadata['improper']
        inst = sys.at([1.0])
        ctx = build_projector_context(inst)
        dual = inst.transposed()
        Y = smith_improper(inst.E, inst.A, inst.B, ctx, 2).Z
        X = smith_improper(dual.E, dual.A, dual.B, ctx.dual(), 2).Z
        assert np.linalg.norm(X.T @ (inst.A @ Y)) <= 1e-12 * np.linalg.norm(X) * np.linalg.norm(inst.A @ Y)

    def test_improper_variant(self, stokes_improper):
        sys, st_ = stokes_improper
        assert sys.metadata['improper']
        B2 = st_.B2.evaluate([1.0]).toarray()
        C2 = st_.C2.evaluate([1.0]).toarray()
        assert np.flatnonzero(B2).tolist() == [st_.q - 1]
        assert np.flatnonzero(C2).tolist() == [0, st_.q - 1]
        # the input is scaled by (1 + mu)
        assert np.allclose(sys.B.evaluate([0.5]).toarray()[:st_.n], 1.5 / 2.0 * sys.B.evaluate([1.0]).toarray()[:st_.n])

    def test_transfer_matches_quasi_weierstrass(self, stokes_improper):
        sys, _ = stokes_improper
        inst = sys.at([1.2])
        q = quasi_weierstrass_oracle(inst.E, inst.A)
        E, A = inst.E.toarray(), inst.A.toarray()
        s = 0.7 + 2j
        # G(s) = C T^{-1} diag((sI - J)^{-1}, (sN - I)^{-1}) W^{-1} B
        nf = q.n_finite
        Bt = np.linalg.solve(q.W, inst.B)
        Ct = inst.C @ np.linalg.inv(q.T)
        G = Ct[:, :nf] @ np.linalg.solve(s * np.eye(nf) - q.J, Bt[:nf]) + \
            Ct[:, nf:] @ np.linalg.solve(s * q.Nnil - np.eye(q.n_infinite), Bt[nf:])
        assert np.allclose(inst.transfer(s), G, rtol=1e-8)
        assert np.allclose(inst.C @ np.linalg.solve(s * E - A, inst.B), G, rtol=1e-8)

    def test_grid_sizes(self):
        L, G, grid = stokes_matrices(3, 4)
        # interior faces: (nx - 1) ny horizontal and nx (ny - 1) vertical velocities
        assert grid['n_u'] == 2 * 4 and L.shape[0] == 2 * 4 + 3 * 3
        # one pressure per cell, the last one dropped to fix the constant
        assert G.shape == (L.shape[0], 3 * 4 - 1)

    @pytest.mark.parametrize('kwargs', [dict(nx=1), dict(param_box=((-1.0, 1.0),)),
                                        dict(variant='other'), dict(param_box=((0.5, 1.5), (0.5, 1.5)))])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            StokesConfig(**kwargs)


class TestTripleChain:
    def test_reference_dimensions(self):
        cfg = TripleChainConfig(ell=200)
        assert cfg.n == 601
        assert cfg.resolved_input_index() == 449
        sys, mech = make_triple_chain(cfg)
        assert sys.N == 2 * 601 + 1 and sys.kind == Mechanical(601, 1) and sys.index == 3
        sd = first_order_sd_realization(mech, check_params=[])
        assert sd.n + sd.q == 2 * 601 + 2

    def test_small_chain_stiffness(self):
        M, K, D_int, F, G, Bx = triple_chain_matrices(TripleChainConfig(ell=2))
        K = K.toarray()
        assert K.shape == (7, 7)
        assert np.allclose(K, K.T) and np.linalg.eigvalsh(K)[0] > 0
        assert K[6, 6] == 4.0 and K[1, 6] == K[3, 6] == K[5, 6] == 1.0
        assert np.allclose(M.toarray(), np.eye(7))
        assert sum(f.toarray() for f in F).trace() == 7

    def test_damping_at_zero(self):
        cfg = TripleChainConfig(ell=3)
        _, mech = make_triple_chain(cfg)
        M, K, D_int, F, _, _ = triple_chain_matrices(cfg)
        assert np.allclose(mech.D.evaluate([0.0, 0.0, 0.0]).toarray(), (D_int + F[3]).toarray())
        D = mech.D.evaluate([0.2, 0.3, 0.4]).toarray()
        assert np.allclose(D, (D_int + 0.2 * F[0] + 0.3 * F[1] + 0.4 * F[2] + F[3]).toarray())

    def test_constraint_and_io(self):
        cfg = TripleChainConfig(ell=4, input_index=5)
        _, _, _, _, G, Bx = triple_chain_matrices(cfg)
        assert G.toarray()[:, 0].tolist() == [1.0] + [0.0] * 11 + [-1.0]
        assert np.flatnonzero(Bx.toarray()).tolist() == [5]

    def test_deterministic(self):
        a, _ = make_triple_chain(TripleChainConfig(ell=4))
        b, _ = make_triple_chain(TripleChainConfig(ell=4))
        mu = [0.3, 0.6, 0.9]
        assert (a.at(mu).A != b.at(mu).A).nnz == 0 and (a.at(mu).E != b.at(mu).E).nnz == 0

    @pytest.mark.parametrize('kwargs', [dict(ell=0), dict(masses=(1.0, 1.0, 1.0, 0.0)),
                                        dict(stiffnesses=(1.0, 1.0)), dict(alpha=-0.1),
                                        dict(param_box=((0.1, 1.0),))])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TripleChainConfig(**kwargs)

    def test_index_three_pencil(self):
        sys, _ = make_triple_chain(TripleChainConfig(ell=2))
        inst = sys.at([0.5, 0.5, 0.5])
        assert quasi_weierstrass_oracle(inst.E, inst.A).nu == 3
        assert sps.issparse(inst.E)
