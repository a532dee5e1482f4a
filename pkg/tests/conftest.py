import numpy as np
import pytest

from sepprob.linalg import BipartiteDims


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def d22():
    return BipartiteDims(2, 2)


@pytest.fixture
def d23():
    return BipartiteDims(2, 3)


def bell_projector():
    phi = np.zeros(4, dtype=complex)
    phi[0] = phi[3] = 1 / np.sqrt(2)
    return np.outer(phi, phi.conj())


def werner(p):
    return p * bell_projector() + (1 - p) * np.eye(4) / 4


def random_density(rng, N, rank=None):
    rank = rank or N
    Z = rng.standard_normal((N, rank)) + 1j * rng.standard_normal((N, rank))
    A = Z @ Z.conj().T
    return A / np.trace(A).real


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(number, title, checks):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}: {info}{'' if good else ' [FAIL]'}" for name, good, info in checks)
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
