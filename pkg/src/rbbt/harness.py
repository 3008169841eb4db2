"""Offline/online orchestration, frequency and time domain evaluation, reports."""

import ast
import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from rbbt.algebraic import combine_rom, estimate_markov, realize_polynomial, spectral_scale
from rbbt.balanced_truncation import Rom, TruncationRule, build_rom
from rbbt.bundle import dump_json, load_json, load_system, save_rom
from rbbt.errors import EmptyBasisError, FactorizationError, StructureError
from rbbt.lyapunov import AdiOptions, smith_improper
from rbbt.models import StokesConfig, TripleChainConfig, make_stokes, make_triple_chain
from rbbt.param_system import DaeInstance, ParametricDaeSystem
from rbbt.projectors import (alpha_cache, alpha_lower_bound, build_projector_context, first_order_sd_realization,
                             parameter_grid)
from rbbt.reduced_basis import (ReducedBasis, RbOptions, delta1, local_basis, offline_build, online_solve,
                                residual_fro)

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1
CONSISTENCY_TOL = 1e-10
TREATMENTS = ('improper_bt', 'markov_tf', 'none')
SIDES = ('controllability', 'observability')


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Experiment description, loadable from JSON.

    ``system`` is either ``{'bundle': path}`` or a generator entry such as
    ``{'generator': 'stokes', 'variant': 'proper_only'}`` or
    ``{'generator': 'triple_chain', 'ell': 20, 'param_box': [[0.1, 1]] * 3}``.
    ``test_set`` is ``{'type': 'grid', 'per_axis': k}``,
    ``{'type': 'list', 'values': [...]}`` or ``{'type': 'random', 'count': k}``.
    """

    system: dict = field(default_factory=lambda: {'generator': 'stokes'})
    test_set: dict = field(default_factory=lambda: {'type': 'grid', 'per_axis': 10})
    tol: float = 1e-4
    estimator: str = 'delta1'
    relative: bool = False
    max_iterations: int = 50
    truncation: dict = field(default_factory=lambda: {'kind': 'relative_threshold', 'value': 1e-8})
    algebraic: str = 'improper_bt'
    omega: dict = field(default_factory=lambda: {'min': 1e-4, 'max': 1e4, 'count': 200})
    scenario: dict = field(default_factory=lambda: {'input': '-2 - sin(t)', 'T': 10.0, 'dt': 0.01})
    adi: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if 'bundle' in self.system:
            if not os.path.isfile(os.path.join(self.system['bundle'], 'system.json')):
                raise FileNotFoundError(f'no system bundle at {self.system["bundle"]!r}')
        elif self.system.get('generator') not in ('stokes', 'triple_chain'):
            raise ValueError('system needs a bundle path or a known generator')
        if self.algebraic not in TREATMENTS:
            raise ValueError(f'algebraic treatment must be one of {TREATMENTS}')
        if self.estimator not in ('delta1', 'delta2'):
            raise ValueError('estimator must be delta1 or delta2')
        if int(self.omega.get('count', 0)) < 1 or not 0 < self.omega['min'] <= self.omega['max']:
            raise ValueError('frequency grid is empty or not positive')
        if self.scenario.get('dt', 0) <= 0 or self.scenario.get('T', 0) <= 0:
            raise ValueError('time scenario needs positive T and dt')
        if self.tol <= 0:
            raise ValueError('tolerance must be positive')

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f'unknown configuration keys: {sorted(unknown)}')
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_json(path))

    def to_dict(self):
        return asdict(self)

    def omega_grid(self):
        return np.logspace(np.log10(self.omega['min']), np.log10(self.omega['max']), int(self.omega['count']))

    def rule(self):
        return TruncationRule(self.truncation['kind'], float(self.truncation['value']))

    def rb_options(self):
        return RbOptions(adi=AdiOptions(**self.adi), max_iterations=self.max_iterations,
                         estimator=self.estimator, relative=bool(self.relative), workers=self.threads)


@dataclass
class Model:
    """Reduction target plus its provenance; ``index3`` is set for mechanical systems."""

    system: ParametricDaeSystem
    info: dict
    index3: Optional[ParametricDaeSystem] = None


def load_model(system_spec):
    """Build or load the system described by ``ExperimentConfig.system``."""
    spec = dict(system_spec)
    if 'bundle' in spec:
        sys, meta = load_system(spec['bundle'])
        return Model(sys, {'source': 'bundle', 'path': spec['bundle']})
    gen = spec.pop('generator')
    if gen == 'stokes':
        sys, _ = make_stokes(StokesConfig(**spec))
        return Model(sys, {'source': 'stokes', 'config': sys.metadata['config']})
    gamma_mode = spec.pop('gamma_mode', 'constant_over_D')
    sys3, mech = make_triple_chain(TripleChainConfig(**spec))
    sd = first_order_sd_realization(mech, gamma_mode=gamma_mode).to_system()
    return Model(sd, {'source': 'triple_chain', 'config': sys3.metadata['config'],
                      'gamma': sd.metadata.get('gamma')}, sys3)


def test_parameters(cfg, sys):
    """Expand the test set specification into a list of parameter vectors."""
    ts = cfg.test_set
    box = sys.param_box
    if ts['type'] == 'grid':
        pts = parameter_grid(box, int(ts['per_axis']))
    elif ts['type'] == 'list':
        pts = [np.atleast_1d(np.asarray(v, dtype=float)) for v in ts['values']]
    elif ts['type'] == 'random':
        rng = np.random.default_rng(ts.get('seed', cfg.seed))
        pts = list(rng.uniform(box[:, 0], box[:, 1], size=(int(ts['count']), box.shape[0])))
    else:
        raise ValueError(f'unknown test set type {ts["type"]!r}')
    if not pts:
        raise ValueError('test set is empty')
    return [np.atleast_1d(p) for p in pts]


# --------------------------------------------------------------------------
# offline and online phases


@dataclass
class OfflineResult:
    bases: dict
    report: dict


def run_offline(cfg, out=None, model=None):
    """Build controllability and observability bases by greedy sampling.

    Returns
    -------
    OfflineResult
        ``bases[side]`` is a :class:`ReducedBasis`; the report lists basis
        dimensions, per-iteration estimator maxima and the wall time.
    """
    model = model or load_model(cfg.system)
    sys = model.system
    D = test_parameters(cfg, sys)
    opts = cfg.rb_options()
    t0 = time.perf_counter()
    bases = {}
    report = {'schema': REPORT_SCHEMA, 'system': sys.name, 'N': sys.N, 'test_set_size': len(D), 'tol': cfg.tol,
              'estimator': cfg.estimator, 'sides': {}}
    for side in SIDES:
        ts = time.perf_counter()
        try:
            rb = offline_build(sys, side, D, cfg.tol, opts)
        except Exception:
            log.error('offline phase failed on the %s side', side)
            raise
        bases[side] = rb
        report['sides'][side] = {
            'basis_dim': rb.rank, 'iterations': len(rb.iterations), 'solves': rb.num_solves,
            'converged': rb.converged, 'delta_max': [it.get('delta_max') for it in rb.iterations],
            'sampled_params': [np.atleast_1d(m).tolist() for m in rb.sampled_params],
            'wall_time': time.perf_counter() - ts}
    report['wall_time'] = time.perf_counter() - t0
    if out:
        os.makedirs(out, exist_ok=True)
        for side, rb in bases.items():
            rb.save(out, f'basis_{side}')
        dump_json(report, os.path.join(out, 'offline_report.json'))
    return OfflineResult(bases, report)


def load_bases(directory):
    return {side: ReducedBasis.load(directory, f'basis_{side}') for side in SIDES}


def online_factors(inst, ctx, bases):
    """Proper Gramian factors ``(R_p, S_p)`` at one parameter from the global bases."""
    Vc = local_basis(bases['controllability'].V, ctx)
    R = online_solve(inst.E, inst.A, ctx.apply_pi_left(inst.B), Vc, inst.mu).Z
    dual, dctx = inst.transposed(), ctx.dual()
    Vo = local_basis(bases['observability'].V, dctx)
    S = online_solve(dual.E, dual.A, dctx.apply_pi_left(dual.B), Vo, inst.mu).Z
    return R, S


@dataclass
class OnlineResult:
    rom: Rom
    markov: object
    report: dict


def run_online(cfg, mu, bases, model=None, out=None, check_estimator=True):
    """Online phase at ``mu``: local bases, reduced Lyapunov solves, balanced truncation.

    The algebraic part follows ``cfg.algebraic``: ``'improper_bt'`` adds the
    improper Gramians from the finite Smith iteration, ``'markov_tf'`` appends a
    realization of Markov parameters sampled from the transfer function and
    ``'none'`` keeps the proper part only.
    """
    model = model or load_model(cfg.system)
    sys = model.system
    t0 = time.perf_counter()
    inst = sys.at(mu)
    ctx = build_projector_context(inst, verify=False)
    try:
        R, S = online_factors(inst, ctx, bases)
    except EmptyBasisError:
        log.error('online phase failed at mu = %s', inst.mu.tolist())
        raise
    t_gram = time.perf_counter() - t0
    report = {'schema': REPORT_SCHEMA, 'mu': inst.mu.tolist(), 'algebraic': cfg.algebraic}
    if check_estimator:
        ac = alpha_cache(sys)
        alpha = alpha_lower_bound(sys, inst.mu, ac)
        d1 = delta1(residual_fro(inst.E, inst.A, R, ctx.apply_pi_left(inst.B)), alpha)
        report['delta1_controllability'] = d1
        if d1 > cfg.tol:
            log.warning('estimator %.2e exceeds the tolerance at mu = %s; the basis may be inadequate', d1,
                        inst.mu.tolist())
    markov = None
    rule = cfg.rule()
    B, C = np.asarray(inst.B), np.asarray(inst.C)
    if cfg.algebraic == 'improper_bt' and sys.index >= 2:
        Ri = smith_improper(inst.E, inst.A, B, ctx, sys.index, mu=inst.mu).Z
        Si = smith_improper(inst.E.T, inst.A.T, C.T, ctx.dual(), sys.index, side='observability', mu=inst.mu).Z
        rom = build_rom(inst.E, inst.A, B, C, S, R, Si, Ri, rule, ctx=ctx, mu=inst.mu)
    else:
        rom = build_rom(inst.E, inst.A, B, C, S, R, None, None, rule, ctx=ctx, mu=inst.mu)
        if cfg.algebraic == 'markov_tf' and sys.index >= 1:
            scale = spectral_scale(inst.E, inst.A, sys.kind)
            markov = estimate_markov(inst.transfer, min(sys.index, 3), scale=scale,
                                     zero_scale=np.linalg.norm(B) * np.linalg.norm(C))
            rom = combine_rom(rom, realize_polynomial(markov))
    report.update({'r_p': rom.r_p, 'r_i': rom.r_i, 'order': rom.order, 'bt_bound': rom.error_bound(),
                   'proper_hankel': rom.proper_hankel.tolist(), 'improper_hankel': rom.improper_hankel.tolist(),
                   'gramian_time': t_gram, 'wall_time': time.perf_counter() - t0})
    if markov is not None:
        report['markov'] = markov.to_dict()
    if out:
        save_rom(rom, out, markov)
        dump_json(report, os.path.join(out, 'online_report.json'))
    return OnlineResult(rom, markov, report)


def full_bt(inst, rule=None, algebraic='improper_bt', adi=None):
    """Balanced truncation from full LRADI solves at one parameter (reference ROM)."""
    from rbbt.lyapunov import lradi_projected
    ctx = build_projector_context(inst, verify=False)
    B, C = np.asarray(inst.B), np.asarray(inst.C)
    R = lradi_projected(inst.E, inst.A, ctx.apply_pi_left(B), ctx, opts=adi, mu=inst.mu).Z
    dual, dctx = inst.transposed(), ctx.dual()
    S = lradi_projected(dual.E, dual.A, dctx.apply_pi_left(dual.B), dctx, opts=adi, side='observability',
                        mu=inst.mu).Z
    if algebraic == 'improper_bt' and inst.index >= 2:
        Ri = smith_improper(inst.E, inst.A, B, ctx, inst.index).Z
        Si = smith_improper(inst.E.T, inst.A.T, C.T, dctx, inst.index).Z
        return build_rom(inst.E, inst.A, B, C, S, R, Si, Ri, rule, ctx=ctx, mu=inst.mu)
    return build_rom(inst.E, inst.A, B, C, S, R, None, None, rule, ctx=ctx, mu=inst.mu)


# --------------------------------------------------------------------------
# frequency domain


def _transfer_of(model, mu):
    if isinstance(model, Rom):
        return model.transfer
    if isinstance(model, ParametricDaeSystem):
        inst = model.at(mu if model.d else np.zeros(0))
        return inst.transfer
    if isinstance(model, DaeInstance):
        return model.transfer
    if callable(model):
        return model
    raise TypeError(f'cannot evaluate a transfer function of {type(model).__name__}')


def _sigma(G, w):
    try:
        val = np.atleast_2d(G(1j * w))
        if not np.all(np.isfinite(val)):
            raise FactorizationError('non-finite transfer value')
    except (FactorizationError, np.linalg.LinAlgError):
        return None, None
    return float(np.linalg.norm(val, 2)), val


def sigma_plot(model, mu, omegas, other=None):
    """Table of ``sigma_max(G(i w))`` and, with ``other``, of the error transfer function.

    Returns a dict of equally long columns ``omega``, ``sigma_fom`` and
    optionally ``sigma_rom``, ``sigma_err``; ``flag`` is 1 where a model was
    singular at the grid point (the row holds NaN there).
    """
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0):
        raise ValueError('frequency grid must be positive')
    G1 = _transfer_of(model, mu)
    G2 = _transfer_of(other, mu) if other is not None else None
    cols = {'omega': [], 'sigma_fom': [], 'flag': []}
    if G2 is not None:
        cols.update(sigma_rom=[], sigma_err=[])
    for w in omegas:
        s1, v1 = _sigma(G1, w)
        flag = s1 is None
        cols['omega'].append(float(w))
        cols['sigma_fom'].append(np.nan if flag else s1)
        if G2 is not None:
            s2, v2 = _sigma(G2, w)
            bad = flag or s2 is None
            cols['sigma_rom'].append(np.nan if s2 is None else s2)
            cols['sigma_err'].append(np.nan if bad else float(np.linalg.norm(v1 - v2, 2)))
            flag = bad
        cols['flag'].append(int(flag))
    return {k: np.asarray(v) for k, v in cols.items()}


# --------------------------------------------------------------------------
# time domain

_FUNCS = {'sin': np.sin, 'cos': np.cos, 'exp': np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


def _compile_expr(node):
    if isinstance(node, ast.Expression):
        return _compile_expr(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        v = float(node.value)
        return lambda t: v + 0 * t
    if isinstance(node, ast.Name):
        if node.id == 't':
            return lambda t: t
        if node.id == 'pi':
            return lambda t: math.pi + 0 * t
        raise ValueError(f'unknown name {node.id!r} in input expression')
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        f = _compile_expr(node.operand)
        return (lambda t: -f(t)) if isinstance(node.op, ast.USub) else f
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op, a, b = _BINOPS[type(node.op)], _compile_expr(node.left), _compile_expr(node.right)
        return lambda t: op(a(t), b(t))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
            and len(node.args) == 1 and not node.keywords:
        fn, a = _FUNCS[node.func.id], _compile_expr(node.args[0])
        return lambda t: fn(a(t))
    raise ValueError(f'unsupported construct in input expression: {ast.dump(node)}')


class InputSignal:
    """Input ``u(t)`` from expressions in ``t`` with ``+ - * / **``, ``sin``, ``cos``, ``exp``, ``pi``.

    Parameters
    ----------
    spec
        One expression string (single input) or a list, one per input.
    """

    def __init__(self, spec):
        self.spec = [spec] if isinstance(spec, str) else list(spec)
        if not self.spec:
            raise ValueError('input specification is empty')
        self._fns = [_compile_expr(ast.parse(s, mode='eval')) for s in self.spec]

    @property
    def m(self):
        return len(self._fns)

    def __call__(self, t):
        t = np.asarray(t)
        return np.stack([np.broadcast_to(f(t), t.shape) for f in self._fns], axis=-1)

    def derivatives(self, t0, count, radius=1.0, points=64):
        """``u^{(k)}(t0)`` for ``k < count`` by the trapezoidal Cauchy integral on a circle."""
        z = radius * np.exp(2j * np.pi * np.arange(points) / points)
        vals = self(t0 + z)
        out = []
        for k in range(count):
            coef = np.mean(vals * (z ** -k)[:, None], axis=0)
            out.append(math.factorial(k) * coef.real)
        return out


def _model_arrays(model, mu):
    """``(E, A, B, C, apply_pi_right)`` for a full system or a ROM."""
    if isinstance(model, Rom):
        r_p = model.r_p

        def pr(X):
            Y = np.zeros_like(X)
            Y[:r_p] = X[:r_p]
            return Y
        return model.E, model.A, model.B, model.C, pr
    if isinstance(model, ParametricDaeSystem):
        model = model.at(mu if model.d else np.zeros(0))
    if isinstance(model, DaeInstance):
        ctx = build_projector_context(model, verify=False)
        return model.E, model.A, np.asarray(model.B), np.asarray(model.C), ctx.apply_pi_right
    raise TypeError(f'cannot simulate {type(model).__name__}')


def _factor(M):
    if sps.issparse(M):
        lu = spsla.splu(sps.csc_matrix(M))
        return lu.solve
    lu = spla.lu_factor(M)
    return lambda b: spla.lu_solve(lu, b)


def consistent_initial_state(E, A, B, pr, u, index, z0=None):
    """Project ``z0`` with ``Pi_r`` and add the algebraic part fixed by the input.

    The algebraic part is ``-sum_k (A^{-1} E)^k (I - Pi_r) A^{-1} B u^{(k)}(0)``
    for ``k < index``; derivatives of ``u`` come from :meth:`InputSignal.derivatives`.
    """
    N = E.shape[0]
    z = np.zeros(N) if z0 is None else pr(np.asarray(z0, dtype=float).reshape(N, 1)).ravel()
    if index >= 1:
        try:
            solveA = _factor(A)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise FactorizationError('A is singular; cannot initialize the algebraic part') from exc
        derivs = u.derivatives(0.0, max(index, 1))
        X = solveA(np.asarray(B, dtype=float))
        Y = X - pr(X)
        for k, du in enumerate(derivs):
            z -= Y @ du
            Y = solveA(np.asarray(E @ Y))
    rows = np.flatnonzero(np.asarray(abs(E).sum(axis=1)).ravel() == 0)
    if rows.size:
        res = (A @ z + B @ u(0.0))[rows]
        scale = max(np.linalg.norm(B @ u(0.0)), np.linalg.norm(A @ z), 1.0)
        if np.linalg.norm(res) > CONSISTENCY_TOL * scale:
            raise StructureError(f'initial state violates the algebraic equations (residual {np.linalg.norm(res):.2e})')
    return z


def _nilpotency_index(N):
    if N.shape[0] == 0:
        return 0
    P = np.eye(N.shape[0])
    for k in range(1, N.shape[0] + 2):
        P = P @ N
        if np.linalg.norm(P) <= 1e-12 * max(np.linalg.norm(N), 1.0) ** k:
            return k
    raise StructureError('algebraic block of the ROM is not nilpotent')


def simulate(model, mu, input_spec, T, dt, z0=None, index=None):
    """Implicit trapezoidal integration of ``E z' = A z + B u``, ``y = C z``.

    ``E - dt/2 A`` is factored once. For full systems the index defaults to
    the declared index, for ROMs to 2 when an improper block is present.

    Returns
    -------
    dict
        ``t`` (n+1,), ``y`` (n+1, p) and ``u`` (n+1, m).
    """
    u = input_spec if isinstance(input_spec, InputSignal) else InputSignal(input_spec)
    E, A, B, C, pr = _model_arrays(model, mu)
    if index is None:
        if isinstance(model, Rom):
            index = _nilpotency_index(model.E[model.r_p:, model.r_p:])
        else:
            index = getattr(model, 'index', 1)
    if B.shape[1] != u.m:
        raise ValueError(f'model has {B.shape[1]} inputs, signal has {u.m}')
    n = int(round(T / dt))
    t = np.linspace(0.0, n * dt, n + 1)
    U = u(t)
    z = consistent_initial_state(E, A, B, pr, u, index, z0)
    try:
        solve = _factor(E - 0.5 * dt * A)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise FactorizationError('E - dt/2 A is singular') from exc
    Ep = E + 0.5 * dt * A
    Y = np.empty((n + 1, C.shape[0]))
    Y[0] = C @ z
    for k in range(n):
        rhs = Ep @ z + 0.5 * dt * (B @ (U[k] + U[k + 1]))
        z = solve(np.asarray(rhs).ravel())
        Y[k + 1] = C @ z
    return {'t': t, 'y': Y, 'u': U}


# --------------------------------------------------------------------------
# reports


@dataclass
class EvaluationReport:
    mu: list
    sigma: dict
    time: dict
    proper_hankel: list
    improper_hankel: list
    bt_bound: float
    wall_times: dict
    estimator: dict = field(default_factory=dict)

    def max_sigma_error(self):
        return float(np.nanmax(self.sigma['sigma_err']))

    def max_time_error(self):
        return float(np.max(self.time['err']))

    def to_dict(self):
        return {'schema': REPORT_SCHEMA, 'mu': self.mu, 'proper_hankel': self.proper_hankel,
                'improper_hankel': self.improper_hankel, 'bt_bound': self.bt_bound, 'wall_times': self.wall_times,
                'estimator': self.estimator, 'max_sigma_error': self.max_sigma_error(),
                'max_time_error': self.max_time_error()}

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        write_csv(os.path.join(directory, 'sigma.csv'), self.sigma)
        write_csv(os.path.join(directory, 'time.csv'), self.time)
        dump_json(self.to_dict(), os.path.join(directory, 'report.json'))

    @classmethod
    def read(cls, directory):
        meta = load_json(os.path.join(directory, 'report.json'))
        return cls(meta['mu'], read_csv(os.path.join(directory, 'sigma.csv')),
                   read_csv(os.path.join(directory, 'time.csv')), meta['proper_hankel'], meta['improper_hankel'],
                   meta['bt_bound'], meta['wall_times'], meta.get('estimator', {}))


def write_csv(path, table):
    cols = list(table)
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(np.asarray(table[c]) for c in cols)):
            w.writerow([repr(float(x)) for x in row])


def read_csv(path):
    with open(path, newline='') as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(cols))
    return {c: data[:, j] for j, c in enumerate(cols)}


def time_table(sim_fom, sim_rom):
    y, yr = sim_fom['y'], sim_rom['y']
    table = {'t': sim_fom['t']}
    for j in range(y.shape[1]):
        table[f'y{j}'] = y[:, j]
        table[f'yr{j}'] = yr[:, j]
    table['err'] = np.linalg.norm(y - yr, axis=1)
    return table


def compare(fom, rom, mu, cfg, out=None):
    """Sigma plot and simulation of both models at ``mu``; optionally written as CSV + JSON."""
    t0 = time.perf_counter()
    sig = sigma_plot(fom, mu, cfg.omega_grid(), rom)
    t1 = time.perf_counter()
    sc = cfg.scenario
    sf = simulate(fom, mu, sc['input'], sc['T'], sc['dt'])
    t2 = time.perf_counter()
    sr = simulate(rom, mu, sc['input'], sc['T'], sc['dt'])
    t3 = time.perf_counter()
    rep = EvaluationReport(np.atleast_1d(mu).tolist(), sig, time_table(sf, sr),
                           np.asarray(getattr(rom, 'proper_hankel', [])).tolist(),
                           np.asarray(getattr(rom, 'improper_hankel', [])).tolist(),
                           float(rom.error_bound()) if isinstance(rom, Rom) else float('nan'),
                           {'sigma': t1 - t0, 'simulate_fom': t2 - t1, 'simulate_rom': t3 - t2})
    if out:
        rep.write(out)
    return rep


# --------------------------------------------------------------------------
# dense cross-checks


def oracle_report(model, mu, adi=None):
    """Dense desk-scale cross-checks at ``mu``: Lyapunov, projectors and Markov parameters."""
    from rbbt.dense import dense_projected_lyap_oracle, quasi_weierstrass_oracle
    from rbbt.lyapunov import improper_svd_matrix_index2, lradi_projected
    sys = model.system
    inst = sys.at(mu)
    if inst.N > 600:
        raise ValueError('dense cross-checks are limited to N <= 600')
    ctx = build_projector_context(inst, verify=False)
    E, A = inst.E.toarray(), inst.A.toarray()
    B, C = np.asarray(inst.B), np.asarray(inst.C)
    qw = quasi_weierstrass_oracle(E, A)
    Pl, Pr = qw.pi_left(), qw.pi_right()
    N = inst.N
    rep = {'mu': inst.mu.tolist(), 'N': N,
           'pi_left_deviation': float(np.linalg.norm(ctx.apply_pi_left(np.eye(N)) - Pl) / np.linalg.norm(Pl)),
           'pi_right_deviation': float(np.linalg.norm(ctx.apply_pi_right(np.eye(N)) - Pr) / np.linalg.norm(Pr))}
    Z = lradi_projected(inst.E, inst.A, ctx.apply_pi_left(B), ctx, opts=adi).Z
    P = dense_projected_lyap_oracle(E, A, Pl @ B, Pr)
    rep['lyapunov_relative_error'] = float(np.linalg.norm(Z @ Z.T - P) / np.linalg.norm(P))
    exact = qw.markov_parameters(B, C)
    est = estimate_markov(inst.transfer, max(min(sys.index, 3), 1), scale=spectral_scale(inst.E, inst.A, sys.kind),
                          zero_scale=np.linalg.norm(B) * np.linalg.norm(C), check=False)
    ref = max(np.linalg.norm(B) * np.linalg.norm(C), 1e-300)
    rep['markov_exact'] = [np.asarray(m).tolist() for m in exact]
    rep['markov_estimated'] = [np.asarray(m).tolist() for m in est.M]
    rep['markov_deviation'] = [float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-8 * ref))
                               for a, b in zip(exact, est.M)]
    if sys.index == 2 and hasattr(sys.kind, 'n'):
        n = sys.kind.n
        Ri = smith_improper(inst.E, inst.A, B, ctx, 2).Z
        Si = smith_improper(inst.E.T, inst.A.T, C.T, ctx.dual(), 2).Z
        s_smith = np.linalg.svd(Si.T @ (inst.A @ Ri), compute_uv=False)
        Mx = improper_svd_matrix_index2(inst.E[:n, :n], inst.A[:n, :n], inst.A[:n, n:], B[:n], B[n:], C[:, :n],
                                        C[:, n:])
        s_exp = np.linalg.svd(Mx, compute_uv=False)
        k = min(s_smith.size, s_exp.size)
        top = max(s_exp.max(initial=0.0), 1e-300)
        rep['improper_hankel_smith'] = s_smith[:k].tolist()
        rep['improper_hankel_explicit'] = s_exp[:k].tolist()
        rep['improper_hankel_deviation'] = float(np.max(np.abs(s_smith[:k] - s_exp[:k]), initial=0.0) / top)
    return rep
