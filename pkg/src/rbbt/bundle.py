"""On-disk formats: system bundles, low-rank factors and reduced models.

A system bundle is a directory with one Matrix Market file per affine term
(``E_0.mtx``, ``A_1.mtx``, ...) and a ``system.json`` with the coefficient
expressions, kind, parameter box and index.
"""

import json
import os

import numpy as np
import scipy.io
import scipy.sparse as sps

from rbbt.algebraic import MarkovSet
from rbbt.balanced_truncation import Rom
from rbbt.lyapunov import LowRankFactor, ShiftSequence
from rbbt.param_system import AffineMatrixOperator, GeneralSmall, ParametricDaeSystem, kind_from_dict
from rbbt.theta import theta_from_dict

SCHEMA = 1
OPERATORS = ('E', 'A', 'B', 'C')


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f'{type(obj).__name__} is not JSON serializable')


def dump_json(data, path):
    with open(path, 'w') as fh:
        json.dump(data, fh, indent=2, default=_jsonable)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_matrix(path, M):
    if sps.issparse(M):
        scipy.io.mmwrite(path, sps.coo_matrix(M))
    else:
        scipy.io.mmwrite(path, np.atleast_2d(np.asarray(M, dtype=float)))


def _read_matrix(path, sparse=True):
    M = scipy.io.mmread(path)
    if sparse:
        return sps.csc_matrix(M)
    return np.asarray(M.toarray() if sps.issparse(M) else M)


def save_system(sys, directory, extra=None):
    """Write ``sys`` as a bundle into ``directory`` and return the path of ``system.json``."""
    os.makedirs(directory, exist_ok=True)
    ops = {}
    for name in OPERATORS:
        op = getattr(sys, name)
        terms = []
        for k, (theta, mat) in enumerate(op.terms):
            fname = f'{name}_{k}.mtx'
            _write_matrix(os.path.join(directory, fname), mat)
            terms.append({'theta': theta.to_dict(), 'file': fname})
        lowrank = {}
        for k, (U, V) in op.lowrank.items():
            fu, fv = f'{name}_{k}_U.mtx', f'{name}_{k}_V.mtx'
            _write_matrix(os.path.join(directory, fu), U)
            _write_matrix(os.path.join(directory, fv), V)
            lowrank[str(k)] = [fu, fv]
        ops[name] = {'terms': terms, 'lowrank': lowrank}
    meta = {'schema': SCHEMA, 'name': sys.name, 'N': sys.N, 'm': sys.m, 'p': sys.p,
            'kind': sys.kind.to_dict(), 'index': sys.index, 'param_box': sys.param_box.tolist(),
            'operators': ops, 'metadata': sys.metadata}
    if extra:
        meta.update(extra)
    path = os.path.join(directory, 'system.json')
    dump_json(meta, path)
    return path


def load_system(directory):
    """Read a bundle written by :func:`save_system`; returns ``(system, raw json)``."""
    meta = load_json(os.path.join(directory, 'system.json'))
    if meta.get('schema') != SCHEMA:
        raise ValueError(f'unsupported bundle schema {meta.get("schema")!r}')
    ops = {}
    for name in OPERATORS:
        spec = meta['operators'][name]
        terms = [(theta_from_dict(t['theta']), _read_matrix(os.path.join(directory, t['file'])))
                 for t in spec['terms']]
        lowrank = {int(k): (_read_matrix(os.path.join(directory, fu), False),
                            _read_matrix(os.path.join(directory, fv), False))
                   for k, (fu, fv) in spec.get('lowrank', {}).items()}
        ops[name] = AffineMatrixOperator(terms, lowrank)
    box = np.asarray(meta['param_box'], dtype=float).reshape(-1, 2)
    sys = ParametricDaeSystem(ops['E'], ops['A'], ops['B'], ops['C'], box, kind_from_dict(meta['kind']),
                              meta['index'], meta.get('name', 'system'), meta.get('metadata'))
    return sys, meta


def save_factor(factor, directory, stem):
    os.makedirs(directory, exist_ok=True)
    _write_matrix(os.path.join(directory, stem + '.mtx'), factor.Z)
    meta = {'schema': SCHEMA, 'side': factor.side, 'rank': factor.rank,
            'mu': None if factor.mu is None else np.atleast_1d(factor.mu).tolist(),
            'residual_history': list(map(float, factor.residual_history)),
            'shifts': None if factor.shifts is None else factor.shifts.to_dict(),
            'metadata': factor.metadata}
    if factor.Z_right is not None:
        _write_matrix(os.path.join(directory, stem + '_right.mtx'), factor.Z_right)
        meta['right'] = stem + '_right.mtx'
    dump_json(meta, os.path.join(directory, stem + '.json'))


def load_factor(directory, stem):
    meta = load_json(os.path.join(directory, stem + '.json'))
    Z = _read_matrix(os.path.join(directory, stem + '.mtx'), False)
    Zr = _read_matrix(os.path.join(directory, meta['right']), False) if meta.get('right') else None
    shifts = None
    if meta.get('shifts'):
        s = meta['shifts']
        shifts = ShiftSequence([complex(a, b) if b else a for a, b in zip(s['real'], s['imag'])], s.get('cyclic', True),
                               s.get('metadata', {}))
    return LowRankFactor(Z, meta['side'], meta['residual_history'],
                         None if meta['mu'] is None else np.array(meta['mu']), shifts, Zr, meta['metadata'])


def rom_to_system(rom, name='rom'):
    """A reduced model as a parameter-free system (``d = 0``)."""
    ops = [AffineMatrixOperator.constant(sps.csc_matrix(M)) for M in (rom.E, rom.A, rom.B, rom.C)]
    meta = {'r_p': rom.r_p, 'r_i': rom.r_i,
            'mu': None if rom.mu is None else np.atleast_1d(rom.mu).tolist()}
    return ParametricDaeSystem(*ops, np.zeros((0, 2)), GeneralSmall(), 1 if rom.r_i == 0 else 2, name, meta)


def save_rom(rom, directory, markov=None):
    """ROM bundle plus a sidecar with Hankel values, block sizes and Markov data."""
    save_system(rom_to_system(rom), directory)
    side = {'schema': SCHEMA, 'r_p': rom.r_p, 'r_i': rom.r_i,
            'proper_hankel': np.asarray(rom.proper_hankel).tolist(),
            'improper_hankel': np.asarray(rom.improper_hankel).tolist(),
            'mu': None if rom.mu is None else np.atleast_1d(rom.mu).tolist(),
            'metadata': rom.metadata,
            'markov': None if markov is None else markov.to_dict()}
    dump_json(side, os.path.join(directory, 'rom.json'))


def load_rom(directory):
    sys, _ = load_system(directory)
    side = load_json(os.path.join(directory, 'rom.json'))
    inst = sys.at(np.zeros(0))
    rom = Rom(inst.E.toarray(), inst.A.toarray(), np.asarray(inst.B), np.asarray(inst.C),
              side['r_p'], side['r_i'], np.asarray(side['proper_hankel']), np.asarray(side['improper_hankel']),
              None if side['mu'] is None else np.asarray(side['mu']), side['metadata'])
    markov = None
    if side.get('markov'):
        mk = side['markov']
        markov = MarkovSet([np.asarray(m) for m in mk['M']], mk['omegas'], mk['consistency'])
    return rom, markov
