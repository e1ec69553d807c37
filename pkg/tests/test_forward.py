import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from advdiff import AmplitudeFunction, LinearSolveError, TimeGrid, observe_final, solve_forward
from advdiff.forward import ShiftedSystem, solve_linear, write_trajectory

from conftest import heat_problem, manufactured_problem
from oracles import advective_source, duhamel_mode1, manufactured_u, order

PI = np.pi


def test_time_grid_pins_final_node():
    tg = TimeGrid(0.3, 7)
    assert tg.nodes[0] == 0.0 and tg.nodes[-1] == 0.3
    assert tg.nodes.size == 8
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_zero_source_gives_zero_trajectory():
    traj = solve_forward(heat_problem(16, f=lambda x: 0 * x, b=0.7))
    assert not np.any(traj.snapshots)
    assert not np.any(observe_final(traj))


def test_snapshot_bookkeeping():
    p = heat_problem(8, n_steps=1)
    traj = solve_forward(p)
    assert traj.snapshots.shape == (2, 8)
    np.testing.assert_array_equal(observe_final(traj), traj.snapshots[1])
    assert np.all(traj.snapshots[0] == 0.0)
    strided = solve_forward(heat_problem(8, n_steps=10), stride=4)
    np.testing.assert_array_equal(strided.times, [0.0, 0.4, 0.8, 1.0])


def test_observe_final_is_a_copy():
    traj = solve_forward(heat_problem(8))
    out = observe_final(traj)
    out[:] = 0.0
    assert np.any(traj.final)


def test_manufactured_final_state():
    p = manufactured_problem(64)
    x = p.grid.nodes()[:, 0]
    err = np.abs(observe_final(solve_forward(p)) - manufactured_u(x, 1.0)).max()
    assert err <= 5 * p.grid.h[0] ** 2


def test_duhamel_constant_amplitude():
    errs = []
    for n in (32, 64):
        p = heat_problem(n, n_steps=n)
        x = p.grid.nodes()[:, 0]
        errs.append(np.abs(solve_forward(p).final - duhamel_mode1() * np.sin(PI * x)).max())
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-4


def test_backward_euler_temporal_order():
    # fine space grid so time error dominates
    errs, dts = [], []
    for m in (10, 20, 40):
        p = manufactured_problem(200, n_steps=m)
        p.rho = AmplitudeFunction.constant(1.0)
        x = p.grid.nodes()[:, 0]
        errs.append(np.abs(solve_forward(p, theta=1.0).final - duhamel_mode1() * np.sin(PI * x)).max())
        dts.append(1.0 / m)
    assert np.all(order(errs, dts) >= 0.8)


def test_general_source_advective():
    b = 0.5
    errs, hs = [], []
    for n in (32, 64):
        p = manufactured_problem(n, b=b)
        x = p.grid.nodes()[:, 0]
        g = advective_source(b)
        traj = solve_forward(p, source=lambda t: g(x, t))
        errs.append(np.abs(traj.final - manufactured_u(x, 1.0)).max())
        hs.append(p.grid.h[0])
    assert order(errs, hs)[0] >= 1.7


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_linearity_in_source(alpha, beta, seed):
    r = np.random.default_rng(seed)
    p = heat_problem(12, b=0.4, n_steps=6)
    f1, f2 = r.standard_normal(12), r.standard_normal(12)
    run = lambda f: solve_forward(p.with_source(f), tol=1e-13).snapshots
    lhs = run(alpha * f1 + beta * f2)
    rhs = alpha * run(f1) + beta * run(f2)
    scale = max(1.0, np.abs(run(f1)).max() + np.abs(run(f2)).max()) * (abs(alpha) + abs(beta) + 1)
    assert np.abs(lhs - rhs).max() <= 1e-10 * scale


def test_solve_linear_identity_and_zero(rng):
    I = ShiftedSystem(sp.identity(5, format="csr"))
    r = rng.standard_normal(5)
    np.testing.assert_allclose(solve_linear(I, r), r)
    assert not np.any(solve_linear(I, np.zeros(5)))


def test_solve_linear_residual(rng):
    n = 64
    h = 1.0 / (n + 1)
    lap = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / h**2
    A = (sp.identity(n) - 0.01 * lap).tocsr()
    b = rng.standard_normal(n)
    x = solve_linear(ShiftedSystem(A), b, tol=1e-10)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_linear_reports_nonconvergence(rng):
    n = 200
    system = ShiftedSystem(sp.identity(n, format="csr"))
    system.matrix = sp.csc_matrix(rng.standard_normal((n, n)))
    system.preconditioner = None
    with pytest.raises(LinearSolveError) as info:
        solve_linear(system, rng.standard_normal(n), tol=1e-14, maxiter=2)
    assert info.value.residual is not None


def test_write_trajectory(tmp_path):
    traj = solve_forward(heat_problem(6, n_steps=3))
    path = write_trajectory(traj, tmp_path / "traj")
    manifest = json.loads(path.read_text())
    assert [e["t"] for e in manifest["files"]] == traj.times.tolist()
    assert all((path.parent / e["file"]).exists() for e in manifest["files"])
