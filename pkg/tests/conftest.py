import numpy as np
import pytest

from mssde.averaging import SwitchModel
from mssde.chain import GeneratorField
from mssde.poisson import StateFunctionField
from mssde.polynomial import PolyArray


def random_generator_matrix(rng, m0, density=0.7, low=0.1, high=1.0):
    """Irreducible generator: random sparse rates plus a positive cycle."""
    off = rng.uniform(low, high, (m0, m0)) * (rng.random((m0, m0)) < density)
    for i in range(m0):
        off[i, (i + 1) % m0] = rng.uniform(low, high)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(off.sum(axis=1))


def _random_terms(rng, n, degree, scale=1.0):
    terms = []
    for _ in range(rng.integers(1, 4)):
        e = np.zeros(n, dtype=int)
        for _ in range(rng.integers(0, degree + 1)):
            e[rng.integers(n)] += 1
        terms.append((tuple(e), float(scale * rng.normal())))
    return terms


def random_generator_field(rng, m0, n):
    """q_ij(x) = a + c (x_l - s)^2 with a > 0: positive and irreducible everywhere."""
    entries = {}
    for i in range(m0):
        for j in range(m0):
            if i == j:
                continue
            a = rng.uniform(0.3, 1.5)
            c = rng.uniform(0.0, 0.5)
            s = rng.uniform(-1.0, 1.0)
            l = int(rng.integers(n))
            e2 = [0] * n
            e2[l] = 2
            e1 = [0] * n
            e1[l] = 1
            entries[(i, j)] = [((0,) * n, a + c * s * s), (tuple(e1), -2 * c * s), (tuple(e2), c)]
    return GeneratorField.from_terms(m0, n, entries)


def random_model(rng, m0=None, n=None, d=None, sigma_shared=False):
    m0 = int(rng.integers(2, 5)) if m0 is None else m0
    n = int(rng.integers(1, 3)) if n is None else n
    d = n if d is None else d
    drift = {(i, k): _random_terms(rng, n, 2) for i in range(m0) for k in range(n)}
    if sigma_shared:
        base = {(k, r): _random_terms(rng, n, 1, 0.5) for k in range(n) for r in range(d)}
        diff = {(i, k, r): base[(k, r)] for i in range(m0) for k in range(n) for r in range(d)}
    else:
        diff = {(i, k, r): _random_terms(rng, n, 1, 0.5)
                for i in range(m0) for k in range(n) for r in range(d)}
    return SwitchModel(
        n=n, d=d, m0=m0,
        drift=StateFunctionField(PolyArray.from_entry_terms(drift, (m0, n), n)),
        diffusion=PolyArray.from_entry_terms(diff, (m0, n, d), n),
        generator=random_generator_field(rng, m0, n), name="random")


def unit(rng, n):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


# acceptance bookkeeping: one line per criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
