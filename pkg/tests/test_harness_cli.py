import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from rbbt import harness, instrument
from rbbt.balanced_truncation import sigma_max_error
from rbbt.bundle import load_json, load_rom, load_system
from rbbt.cli import main
from rbbt.param_system import AffineMatrixOperator, ParametricDaeSystem

SMALL = {'generator': 'stokes', 'nx': 3, 'ny': 3}
IMPROPER = dict(SMALL, variant='improper_variant')


def small_config(**overrides):
    data = {'system': SMALL, 'test_set': {'type': 'list', 'values': [0.6, 1.0, 1.4]}, 'tol': 1e-6,
            'omega': {'min': 1e-2, 'max': 1e2, 'count': 20},
            'scenario': {'input': '1 - exp(-t)', 'T': 1.0, 'dt': 0.05}}
    data.update(overrides)
    return harness.ExperimentConfig.from_dict(data)


def scalar_system():
    c = AffineMatrixOperator.constant
    return ParametricDaeSystem(c([[1.0]]), c([[-1.0]]), c([[1.0]]), c([[1.0]]), np.zeros((0, 2)))


@pytest.fixture(scope='module')
def improper_offline():
    cfg = small_config(system=IMPROPER)
    model = harness.load_model(cfg.system)
    return cfg, model, harness.run_offline(cfg, model=model)


class TestConfig:
    def test_defaults(self):
        cfg = harness.ExperimentConfig()
        assert cfg.algebraic == 'improper_bt' and cfg.estimator == 'delta1'
        assert cfg.omega_grid().size == 200
        assert cfg.omega_grid()[0] == pytest.approx(1e-4) and cfg.omega_grid()[-1] == pytest.approx(1e4)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match='colour'):
            harness.ExperimentConfig.from_dict({'colour': 'blue'})

    @pytest.mark.parametrize('kwargs', [dict(system={'generator': 'heat'}), dict(algebraic='drop'),
                                        dict(estimator='delta3'), dict(tol=0.0),
                                        dict(omega={'min': 0.0, 'max': 1.0, 'count': 5}),
                                        dict(omega={'min': 1.0, 'max': 10.0, 'count': 0}),
                                        dict(scenario={'input': '1', 'T': 1.0, 'dt': 0.0})])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            harness.ExperimentConfig(**kwargs)

    def test_missing_bundle(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            harness.ExperimentConfig(system={'bundle': str(tmp_path)})

    def test_json_round_trip(self, tmp_path):
        cfg = small_config(relative=True)
        path = tmp_path / 'cfg.json'
        path.write_text(json.dumps(cfg.to_dict()))
        back = harness.ExperimentConfig.load(str(path))
        assert back == cfg and back.rb_options().relative

    def test_test_sets(self, stokes_proper):
        sys, _ = stokes_proper
        grid = harness.test_parameters(harness.ExperimentConfig(test_set={'type': 'grid', 'per_axis': 4}), sys)
        assert np.allclose(np.ravel(grid), [0.5, 0.5 + 1 / 3, 0.5 + 2 / 3, 1.5])
        rand = harness.test_parameters(harness.ExperimentConfig(test_set={'type': 'random', 'count': 6}), sys)
        assert len(rand) == 6 and all(0.5 <= m[0] <= 1.5 for m in rand)
        with pytest.raises(ValueError):
            harness.test_parameters(harness.ExperimentConfig(test_set={'type': 'sobol'}), sys)
        with pytest.raises(ValueError):
            harness.test_parameters(harness.ExperimentConfig(test_set={'type': 'list', 'values': []}), sys)


class TestInputSignal:
    def test_expressions(self):
        u = harness.InputSignal('-2 - sin(t)')
        t = np.array([0.0, 1.0, 2.5])
        assert np.allclose(u(t)[:, 0], -2 - np.sin(t))
        v = harness.InputSignal(['t ** 2 / 2', 'exp(-t) * cos(pi * t)', '+3'])
        assert v.m == 3
        assert np.allclose(v(t), np.stack([t ** 2 / 2, np.exp(-t) * np.cos(np.pi * t), 3 + 0 * t], axis=-1))
        assert v(0.5).shape == (3,)

    @pytest.mark.parametrize('text', ['__import__("os")', 'x + 1', 'tan(t)', 'sin(t, t)', '[1]', 'True',
                                      't if t else 1', ''])
    def test_rejected(self, text):
        with pytest.raises((ValueError, SyntaxError)):
            harness.InputSignal(text)

    def test_empty_list(self):
        with pytest.raises(ValueError):
            harness.InputSignal([])

    def test_derivatives(self):
        d = harness.InputSignal('sin(2 * t) + t ** 3').derivatives(0.0, 4)
        assert np.allclose(np.ravel(d), [0.0, 2.0, 0.0, -8.0 + 6.0], atol=1e-10)


class TestSimulate:
    def test_zero_input(self):
        sim = harness.simulate(scalar_system(), None, '0', 2.0, 0.1)
        assert sim['t'].shape == (21,) and np.array_equal(sim['y'], np.zeros((21, 1)))

    def test_step_response(self):
        sim = harness.simulate(scalar_system(), None, '1', 3.0, 0.01)
        assert np.allclose(sim['y'][:, 0], 1 - np.exp(-sim['t']), atol=1e-5)

    def test_input_count_mismatch(self):
        with pytest.raises(ValueError):
            harness.simulate(scalar_system(), None, ['1', '2'], 1.0, 0.1)

    def test_saddle_point_output_is_consistent(self, stokes_improper):
        # with feedthrough from the pressure, y(0) is fixed by u(0) through the algebraic part
        sys, _ = stokes_improper
        mu = np.array([1.0])
        sim = harness.simulate(sys, mu, '2', 0.5, 0.01)
        inst = sys.at(mu)
        y_alg = np.real(inst.transfer(1e8j))
        assert np.allclose(sim['y'][0], 2 * y_alg[:, 0], rtol=1e-5, atol=1e-12)


class TestSigma:
    def test_scalar(self):
        w = np.array([0.5, 1.0, 2.0])
        tab = harness.sigma_plot(scalar_system(), None, w)
        assert np.allclose(tab['sigma_fom'], 1 / np.sqrt(1 + w ** 2))
        assert tab['flag'].tolist() == [0, 0, 0]

    def test_against_itself(self, stokes_proper):
        sys, _ = stokes_proper
        tab = harness.sigma_plot(sys, [0.8], np.logspace(-1, 1, 5), sys)
        assert np.array_equal(tab['sigma_err'], np.zeros(5))
        assert np.array_equal(tab['sigma_fom'], tab['sigma_rom'])

    def test_singular_point_is_flagged(self):
        c = AffineMatrixOperator.constant
        osc = ParametricDaeSystem(c(np.eye(2)), c([[0.0, 1.0], [-1.0, 0.0]]), c([[0.0], [1.0]]), c([[1.0, 0.0]]),
                                  np.zeros((0, 2)))
        tab = harness.sigma_plot(osc, None, [0.5, 1.0], lambda s: np.array([[0.0]]))
        assert tab['flag'].tolist() == [0, 1] and np.isnan(tab['sigma_err'][1])

    def test_positive_grid(self):
        with pytest.raises(ValueError):
            harness.sigma_plot(scalar_system(), None, [0.0, 1.0])


class TestReports:
    def test_csv_round_trip(self, tmp_path):
        table = {'a': np.array([1.0, 2.5]), 'b': np.array([np.pi, -1e-300])}
        harness.write_csv(str(tmp_path / 't.csv'), table)
        back = harness.read_csv(str(tmp_path / 't.csv'))
        assert list(back) == ['a', 'b'] and all(np.array_equal(back[k], table[k]) for k in table)

    def test_compare_identical_models(self, tmp_path, stokes_proper):
        sys, _ = stokes_proper
        cfg = small_config(system={'generator': 'stokes'})
        rep = harness.compare(sys, sys, [1.0], cfg, str(tmp_path))
        assert rep.max_sigma_error() == 0.0 and rep.max_time_error() == 0.0
        back = harness.EvaluationReport.read(str(tmp_path))
        assert back.mu == [1.0] and np.isnan(back.bt_bound)
        assert np.array_equal(back.sigma['sigma_fom'], rep.sigma['sigma_fom'])
        assert back.time['t'].size == 21


class TestOfflineOnline:
    def test_offline_report(self, improper_offline):
        cfg, model, res = improper_offline
        for side in harness.SIDES:
            rep = res.report['sides'][side]
            assert rep['converged'] and rep['basis_dim'] == res.bases[side].rank > 0
        assert res.report['test_set_size'] == 3 and res.report['wall_time'] > 0

    def test_online_without_algebraic_part_needs_no_full_solves(self, improper_offline):
        cfg, model, res = improper_offline
        cfg = small_config(system=IMPROPER, algebraic='none')
        instrument.reset()
        out = harness.run_online(cfg, [0.9], res.bases, model, check_estimator=False)
        assert instrument.pencil_factorizations['adi'] == 0
        assert instrument.pencil_factorizations['smith'] == 0
        assert out.rom.r_i == 0

    def test_online_matches_full_bt_at_sampled_parameter(self, improper_offline):
        cfg, model, res = improper_offline
        mu = res.bases['controllability'].sampled_params[0]
        on = harness.run_online(cfg, mu, res.bases, model)
        ref = harness.full_bt(model.system.at(mu), cfg.rule(), 'improper_bt', None)
        k = min(on.rom.r_p, ref.r_p)
        assert np.allclose(on.rom.proper_hankel[:k], ref.proper_hankel[:k], rtol=1e-5)
        assert np.allclose(on.rom.improper_hankel, ref.improper_hankel, rtol=1e-8)
        w = np.logspace(-2, 2, 15)
        tf = model.system.at(mu).transfer
        assert sigma_max_error(tf, on.rom.transfer, w).max() <= on.rom.error_bound() + 1e-6

    def test_markov_and_none_agree_on_proper_system(self):
        cfg = small_config()
        model = harness.load_model(cfg.system)
        res = harness.run_offline(cfg, model=model)
        roms = {t: harness.run_online(small_config(algebraic=t), [1.1], res.bases, model).rom
                for t in ('none', 'markov_tf')}
        for s in (0.1j, 3j, 50j):
            assert np.allclose(roms['none'].transfer(s), roms['markov_tf'].transfer(s), atol=1e-8)

    def test_saved_bases_reload(self, tmp_path, improper_offline):
        cfg, model, res = improper_offline
        for side, rb in res.bases.items():
            rb.save(str(tmp_path), f'basis_{side}')
        back = harness.load_bases(str(tmp_path))
        assert all(np.allclose(back[s].V, res.bases[s].V) for s in harness.SIDES)

    def test_triple_chain_model(self):
        model = harness.load_model({'generator': 'triple_chain', 'ell': 2})
        assert model.index3.index == 3 and model.system.N == model.index3.N + 1
        assert model.info['gamma'] > 0


class TestOracleReport:
    def test_small_improper_stokes(self):
        model = harness.load_model(IMPROPER)
        rep = harness.oracle_report(model, [0.7])
        assert rep['lyapunov_relative_error'] <= 1e-8
        assert max(rep['pi_left_deviation'], rep['pi_right_deviation']) <= 1e-8
        assert rep['improper_hankel_deviation'] <= 1e-8


class TestCli:
    def invoke(self, *args):
        res = CliRunner().invoke(main, list(args), catch_exceptions=False)
        assert res.exit_code == 0, res.output
        return res.output

    @pytest.fixture
    def config(self, tmp_path):
        path = tmp_path / 'cfg.json'
        path.write_text(json.dumps(small_config(system=IMPROPER).to_dict()))
        return str(path)

    def test_generate(self, tmp_path, config):
        out = str(tmp_path / 'bundle')
        assert 'N = 20' in self.invoke('generate', '--config', config, '--out', out)
        sys, meta = load_system(out)
        assert sys.N == 20 and meta['source']['source'] == 'stokes'

    def test_pipeline(self, tmp_path, config):
        out = str(tmp_path / 'run')
        text = self.invoke('offline', '--config', config, '--out', out)
        assert 'controllability: basis' in text and 'converged True' in text
        assert os.path.isfile(os.path.join(out, 'offline_report.json'))
        self.invoke('online', '--config', config, '--out', out, '--mu', '0.8')
        rom, _ = load_rom(os.path.join(out, 'rom'))
        assert rom.r_i > 0
        text = self.invoke('compare', '--config', config, '--out', out, '--mu', '0.8')
        assert 'max sigma error' in text
        rep = load_json(os.path.join(out, 'rom', 'evaluation', 'report.json'))
        assert rep['max_sigma_error'] <= rep['bt_bound'] + 1e-8
        self.invoke('sigma', '--config', config, '--out', out, '--mu', '0.8')
        assert 'sigma_err' in harness.read_csv(os.path.join(out, 'sigma.csv'))
        self.invoke('simulate', '--config', config, '--out', out, '--mu', '0.8')
        assert 'yr0' in harness.read_csv(os.path.join(out, 'time.csv'))

    def test_several_parameters(self, tmp_path, config):
        out = str(tmp_path / 'multi')
        self.invoke('sigma', '--config', config, '--out', out, '--mu', '0.6', '--mu', '1.2')
        for k in range(2):
            tab = harness.read_csv(os.path.join(out, f'mu_{k}', 'sigma.csv'))
            assert set(tab) == {'omega', 'sigma_fom', 'flag'} and tab['omega'].size == 20

    def test_oracle(self, tmp_path, config):
        out = str(tmp_path / 'oracle')
        assert 'Lyapunov rel. error' in self.invoke('oracle', '--config', config, '--out', out, '--mu', '1.0')
        assert load_json(os.path.join(out, 'oracle.json'))['N'] == 20

    def test_bad_parameter(self, tmp_path, config):
        runner = CliRunner()
        res = runner.invoke(main, ['sigma', '--config', config, '--out', str(tmp_path), '--mu', '1,2'])
        assert res.exit_code != 0 and 'expected 1 components' in res.output
        res = runner.invoke(main, ['sigma', '--config', config, '--out', str(tmp_path), '--mu', 'abc'])
        assert res.exit_code != 0
        res = runner.invoke(main, ['sigma', '--config', config, '--out', str(tmp_path)])
        assert res.exit_code != 0 and '--mu is required' in res.output
