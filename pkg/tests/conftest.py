import numpy as np
import pytest

from wonhamstab.model import FiniteHmm, builtin_presets

_ACCEPTANCE_LINES: list[str] = []


def random_generator(rng, d, density=None, low=0.5, high=2.0):
    density = rng.uniform(0.15, 0.8) if density is None else density
    G = np.where(rng.random((d, d)) < density, rng.uniform(low, high, (d, d)), 0.0)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


def random_model(rng, d_max=8, d_min=2, **kw):
    """Random generator plus a random level-set partition of h."""
    d = int(rng.integers(d_min, d_max + 1))
    r = int(rng.integers(1, d + 1))
    values = rng.permutation(np.linspace(-1.0, 2.0, r))
    h = values[rng.integers(0, r, d)]
    return FiniteHmm(random_generator(rng, d, **kw), h, 1.0)


@pytest.fixture(scope="session")
def presets():
    return builtin_presets()


@pytest.fixture
def record_criterion():
    """Log one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def _record(number, label, ok, detail=""):
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {label} {detail}".rstrip())
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
