"""Command line entry point ``rbbt``.

Every subcommand reads an :class:`~rbbt.harness.ExperimentConfig` from
``--config`` (defaults apply without one) and writes CSV tables, JSON
reports and system bundles below ``--out``. Offline bases are stored in the
output directory and picked up from there by the online subcommands.
"""

import logging
import os

import click
import numpy as np

from rbbt import harness
from rbbt.bundle import dump_json, load_rom, save_system


def _config(path, tol=None, seed=None, threads=None):
    cfg = harness.ExperimentConfig.load(path) if path else harness.ExperimentConfig()
    if tol is not None:
        cfg.tol = tol
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    return cfg


def _parse_mu(values, d):
    if not values:
        raise click.UsageError('--mu is required')
    out = []
    for text in values:
        try:
            mu = np.array([float(x) for x in text.split(',') if x.strip()])
        except ValueError:
            raise click.BadParameter(f'{text!r} is not a comma separated list of numbers', param_hint='--mu')
        if mu.size != d:
            raise click.BadParameter(f'expected {d} components, got {mu.size}', param_hint='--mu')
        out.append(mu)
    return out


def _targets(out, mus):
    """One output directory per parameter; a single parameter writes into ``out`` itself."""
    if len(mus) == 1:
        return [(mus[0], out)]
    return [(mu, os.path.join(out, f'mu_{k}')) for k, mu in enumerate(mus)]


def common(fn):
    fn = click.option('--threads', type=int, default=None, help='Worker threads for parameter sweeps.')(fn)
    fn = click.option('--seed', type=int, default=None, help='Seed for random test sets.')(fn)
    fn = click.option('--tol', type=float, default=None, help='Greedy tolerance.')(fn)
    fn = click.option('--out', type=click.Path(file_okay=False), default='out', show_default=True,
                      help='Output directory.')(fn)
    fn = click.option('--mu', multiple=True, help='Parameter as comma list; repeat for several.')(fn)
    fn = click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None,
                      help='Experiment configuration (JSON).')(fn)
    return fn


@click.group()
@click.option('-v', '--verbose', count=True, help='More log output (repeatable).')
def main(verbose):
    """Reduced basis balanced truncation for parametric DAE systems."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


@main.command()
@common
def generate(config, mu, out, tol, seed, threads):
    """Write the configured model as a system bundle."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    save_system(model.system, out, {'source': model.info})
    if model.index3 is not None:
        save_system(model.index3, os.path.join(out, 'index3'))
    click.echo(f'{model.system.name}: N = {model.system.N}, d = {model.system.d} -> {out}')


@main.command()
@common
def offline(config, mu, out, tol, seed, threads):
    """Greedy construction of both global bases."""
    cfg = _config(config, tol, seed, threads)
    res = harness.run_offline(cfg, out)
    for side, rep in res.report['sides'].items():
        click.echo(f'{side}: basis {rep["basis_dim"]}, {rep["iterations"]} iterations, '
                   f'converged {rep["converged"]}')
    click.echo(f'offline wall time {res.report["wall_time"]:.2f} s')


def _online_all(cfg, mus, out, model):
    bases = harness.load_bases(out)
    results = []
    for mu, target in _targets(os.path.join(out, 'rom'), mus):
        res = harness.run_online(cfg, mu, bases, model, target)
        click.echo(f'mu = {mu.tolist()}: ROM order {res.rom.order} (r_p {res.rom.r_p}, r_i {res.rom.r_i}), '
                   f'bound {res.report["bt_bound"]:.3e}, {res.report["wall_time"]:.3f} s')
        results.append((mu, target, res))
    return results


@main.command()
@common
def online(config, mu, out, tol, seed, threads):
    """Reduced model at each ``--mu`` from the stored bases."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    _online_all(cfg, _parse_mu(mu, model.system.d), out, model)


def _rom_for(out, mus, k):
    path = os.path.join(out, 'rom') if len(mus) == 1 else os.path.join(out, 'rom', f'mu_{k}')
    if os.path.isfile(os.path.join(path, 'system.json')):
        return load_rom(path)[0]
    return None


@main.command()
@common
def sigma(config, mu, out, tol, seed, threads):
    """Sigma plot of the full model, and of the error if a ROM was built."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    mus = _parse_mu(mu, model.system.d)
    for k, (m, target) in enumerate(_targets(out, mus)):
        table = harness.sigma_plot(model.system, m, cfg.omega_grid(), _rom_for(out, mus, k))
        os.makedirs(target, exist_ok=True)
        harness.write_csv(os.path.join(target, 'sigma.csv'), table)
        click.echo(f'mu = {m.tolist()}: {os.path.join(target, "sigma.csv")}')


@main.command()
@common
def simulate(config, mu, out, tol, seed, threads):
    """Time-domain output for the configured scenario."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    mus = _parse_mu(mu, model.system.d)
    sc = cfg.scenario
    for k, (m, target) in enumerate(_targets(out, mus)):
        sim = harness.simulate(model.system, m, sc['input'], sc['T'], sc['dt'])
        rom = _rom_for(out, mus, k)
        if rom is not None:
            table = harness.time_table(sim, harness.simulate(rom, m, sc['input'], sc['T'], sc['dt']))
        else:
            table = {'t': sim['t'], **{f'y{j}': sim['y'][:, j] for j in range(sim['y'].shape[1])}}
        os.makedirs(target, exist_ok=True)
        harness.write_csv(os.path.join(target, 'time.csv'), table)
        click.echo(f'mu = {m.tolist()}: {os.path.join(target, "time.csv")}')


@main.command()
@common
def compare(config, mu, out, tol, seed, threads):
    """Online phase plus sigma plot and simulation of full and reduced model."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    for m, target, res in _online_all(cfg, _parse_mu(mu, model.system.d), out, model):
        rep = harness.compare(model.system, res.rom, m, cfg, os.path.join(target, 'evaluation'))
        click.echo(f'mu = {m.tolist()}: max sigma error {rep.max_sigma_error():.3e}, '
                   f'max output error {rep.max_time_error():.3e}')


@main.command()
@common
def oracle(config, mu, out, tol, seed, threads):
    """Dense cross-checks at each ``--mu`` (small systems only)."""
    cfg = _config(config, tol, seed, threads)
    model = harness.load_model(cfg.system)
    mus = _parse_mu(mu, model.system.d)
    for m, target in _targets(out, mus):
        rep = harness.oracle_report(model, m)
        os.makedirs(target, exist_ok=True)
        dump_json(rep, os.path.join(target, 'oracle.json'))
        click.echo(f'mu = {m.tolist()}: Lyapunov rel. error {rep["lyapunov_relative_error"]:.2e}, '
                   f'projector deviation {max(rep["pi_left_deviation"], rep["pi_right_deviation"]):.2e}')


if __name__ == '__main__':
    main()
