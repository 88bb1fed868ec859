import functools
import re

import numpy as np
import pytest

from lsfem.assembly import LameParameters, assemble_blocks
from lsfem.mesh import Family, MeshFamily, generate_mesh
from lsfem.spectral import build_schur, eigensolve


@functools.lru_cache(maxsize=None)
def mesh(family, n, seed=0):
    return generate_mesh(MeshFamily(Family.parse(family), n, seed))


@functools.lru_cache(maxsize=None)
def system(family, n, lam=1.0, mu=1.0, deflate=False):
    return assemble_blocks(mesh(family, n), LameParameters(mu, lam), deflate_trace=deflate)


@functools.lru_cache(maxsize=None)
def pencil(family, n, lam=1.0, mu=1.0, deflate=False):
    return build_schur(system(family, n, lam, mu, deflate))


@functools.lru_cache(maxsize=None)
def spectrum(family, n, lam=1.0, mu=1.0, deflate=False):
    return eigensolve(pencil(family, n, lam, mu, deflate))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, one line per criterion, shown after the test run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        number, rest = re.match(r"(\d+)(.*)", key).groups()
        return int(number), rest

    for key in sorted(ACCEPTANCE, key=order):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {text}")
