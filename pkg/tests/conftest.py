"""Shared fixtures.

The expensive benchmark runs (the two N=60 alpha tables and the adaptive
studies) are computed once per session and shared between the acceptance
tests that read different aspects of the same data.
"""
import time

import numpy as np
import pytest

from darcyfem import problems
from darcyfem.adaptivity import adaptive_loop, uniform_study
from darcyfem.nonlinear_solver import SolverConfig, alpha_sweep

TABLE1_ALPHAS = [0.001, 0.01, 0.1, 1, 1.4, 1.9, 2.1, 2.3, 2.5, 2.7,
                 3, 3.7, 5, 10, 100, 1000]
TABLE2_ALPHAS = [0.001, 0.01, 0.1, 1, 6, 8, 10, 11, 12, 13, 14, 15,
                 18, 21, 35, 100, 1000]
# values common to the zero-guess and linear-guess tables
SHARED1_ALPHAS = [0.001, 0.01, 0.1, 1, 1.4, 1.9, 2.3, 3.7, 5, 10, 100, 1000]
SHARED2_ALPHAS = [0.001, 0.01, 0.1, 1, 6, 10, 11, 12, 13, 14, 15, 18,
                  21, 100, 1000]


def _timed_sweep(beta, alphas, guess):
    prob = problems.gaussian_vortex(beta=beta)
    mesh = problems.initial_mesh(prob, 60)
    t0 = time.perf_counter()
    rows = alpha_sweep(mesh, prob, alphas,
                       SolverConfig(tol=1e-5, initial_guess=guess))
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table1_zero():
    return _timed_sweep(1.0, TABLE1_ALPHAS, "zero")


@pytest.fixture(scope="session")
def table2_zero():
    return _timed_sweep(10.0, TABLE2_ALPHAS, "zero")


@pytest.fixture(scope="session")
def table1_darcy():
    return _timed_sweep(1.0, SHARED1_ALPHAS, "darcy")


@pytest.fixture(scope="session")
def table2_darcy():
    return _timed_sweep(10.0, SHARED2_ALPHAS, "darcy")


@pytest.fixture(scope="session")
def adaptive_seven():
    prob = problems.gaussian_vortex(beta=10.0)
    return adaptive_loop(prob, levels=7, initial_n=10,
                         solver=SolverConfig(alpha=10.0, gamma_tilde=1e-3,
                                             stopping="indicator_balance",
                                             initial_guess="darcy"))


@pytest.fixture(scope="session")
def vortex_budget_runs():
    """Deep adaptive run and uniform reference for the smooth test case."""
    prob = problems.gaussian_vortex(beta=10.0)
    cfg = SolverConfig(alpha=10.0, gamma_tilde=1e-3,
                       stopping="indicator_balance", initial_guess="darcy")
    adaptive = adaptive_loop(prob, levels=28, initial_n=10, solver=cfg)
    uniform = uniform_study(prob, [40, 80],
                            SolverConfig(alpha=10.0, initial_guess="darcy"))
    return adaptive, uniform


@pytest.fixture(scope="session")
def corner_budget_runs():
    """Same comparison for the reentrant-corner case (no exact solution)."""
    prob = problems.reentrant_corner()
    cfg = SolverConfig(alpha=10.0, gamma_tilde=1e-3,
                       stopping="indicator_balance", initial_guess="darcy")
    adaptive = adaptive_loop(prob, levels=30, initial_n=8, solver=cfg)
    uniform = uniform_study(prob, [8, 16, 32],
                            SolverConfig(alpha=10.0, initial_guess="darcy"))
    return adaptive, uniform


# -- acceptance report --------------------------------------------------------

_acceptance = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        outcome = _acceptance[name].upper()
        terminalreporter.write_line(f"  {name}: {outcome}")


def rng_loop(seed, n):
    """Seeded generators for property-test loops."""
    root = np.random.default_rng(seed)
    return [np.random.default_rng(s)
            for s in root.integers(0, 2 ** 63, size=n)]


def random_affine_problem(rng, with_data=True):
    """Constant SPD K^-1, affine f, compatible constant (b, g) on the square."""
    a = rng.uniform(0.5, 2.0)
    d = rng.uniform(0.5, 2.0)
    off = rng.uniform(-0.4, 0.4) * min(a, d)
    k = np.array([[a, off], [off, d]])
    c_f = rng.uniform(-2, 2, size=6)
    c_b = float(rng.uniform(-1, 1)) if with_data else 0.0

    def k_inverse(x, y):
        shape = np.shape(x)
        return np.broadcast_to(k.reshape((2, 2) + (1,) * len(shape)),
                               (2, 2) + shape)

    def f(x, y):
        return (c_f[0] + c_f[1] * x + c_f[2] * y,
                c_f[3] + c_f[4] * x + c_f[5] * y)

    def b(x, y):
        return np.full(np.shape(x), c_b)

    def g(x, y, normal):
        # constant flux balancing the constant source: |domain| = 1, |bdy| = 4
        return np.full(np.shape(x), c_b / 4.0)

    return problems.ProblemSpec(
        name="random", domain="unit-square", mu=1.0, rho=1.0,
        beta=float(rng.uniform(0, 2)), k_inverse=k_inverse, f=f, b=b, g=g,
        k_constant=True)
