import numpy as np
import pytest

from rbbt.models import StokesConfig, make_stokes

# criterion number -> list of (part, passed, detail); filled by the acceptance tests
CRITERIA = {}


def record(number, part, passed, detail):
    CRITERIA.setdefault(number, []).append((part, bool(passed), detail))
    print(f'CRITERION {number} [{part}]: {"PASS" if passed else "FAIL"} {detail}')


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section('acceptance criteria')
    for number in sorted(CRITERIA):
        parts = CRITERIA[number]
        ok = all(p for _, p, _ in parts)
        detail = '; '.join(f'{name}: {"ok" if p else "FAILED"} ({d})' for name, p, d in parts)
        terminalreporter.write_line(f'CRITERION {number}: {"PASS" if ok else "FAIL"} - {detail}')


@pytest.fixture(scope='session')
def stokes_proper():
    return make_stokes(StokesConfig(variant='proper_only'))


@pytest.fixture(scope='session')
def stokes_improper():
    return make_stokes(StokesConfig(variant='improper_variant', parametric_input=True))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
