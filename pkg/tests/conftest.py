import numpy as np
import pytest

from advdiff import AmplitudeFunction, build_coefficients, build_grid, make_problem

PI = np.pi


def manufactured_problem(n, n_steps=None, b=0.0, T=1.0):
    """1D unit interval, ``a = 1``, ``f = sin(pi x)``, ``rho = 1 + pi^2 t``."""
    grid = build_grid(1, [(0.0, 1.0)], [n])
    coeffs = build_coefficients(grid, a=1.0, b=b)
    rho = AmplitudeFunction.affine(1.0, PI**2)
    return make_problem(grid, coeffs, T, n_steps or n + 1, rho, lambda x: np.sin(PI * x))


def heat_problem(n, rho=1.0, f=None, b=0.0, n_steps=None, T=1.0):
    grid = build_grid(1, [(0.0, 1.0)], [n])
    coeffs = build_coefficients(grid, a=1.0, b=b)
    f = (lambda x: np.sin(PI * x)) if f is None else f
    return make_problem(grid, coeffs, T, n_steps or n, rho, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "LINES", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.LINES:
        terminalreporter.write_line(line)
