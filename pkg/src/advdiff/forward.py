"""Theta-scheme time stepping for ``u_t - L u = rho(t) f(x)``, ``u(0) = 0``."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .amplitude import AmplitudeFunction
from .coefficients import CoefficientSet
from .grid import Field, Grid, GridError, write_field_csv
from .operator import SparseOperator, assemble_operator

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


class LinearSolveError(RuntimeError):
    """Krylov solve did not reach the requested relative residual."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> NDArray[np.float64]:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass
class Problem:
    """Everything that defines one run of the initial-boundary value problem.

    ``f`` may be ``None`` for inverse runs, where the source is supplied per call.
    """

    grid: Grid
    coeffs: CoefficientSet
    time_grid: TimeGrid
    rho: AmplitudeFunction
    f: NDArray | None = None
    operator: SparseOperator = field(default=None)

    def __post_init__(self):
        if self.coeffs.grid != self.grid:
            raise GridError("coefficients live on a different grid")
        if self.operator is None:
            self.operator = assemble_operator(self.grid, self.coeffs)
        elif self.operator.n != self.grid.size:
            raise GridError("operator size does not match the grid")
        if self.f is not None:
            self.f = np.asarray(self.f, dtype=float).ravel()
            if self.f.size != self.grid.size:
                raise GridError(f"source has {self.f.size} values, grid has {self.grid.size}")

    @property
    def T(self) -> float:
        return self.time_grid.T

    def with_source(self, f) -> "Problem":
        return Problem(self.grid, self.coeffs, self.time_grid, self.rho, f, self.operator)


@dataclass(frozen=True)
class Trajectory:
    """Stored snapshots ``u(., times[k])``; the last one is always at ``t = T``."""

    problem: Problem
    times: NDArray = field(repr=False)
    snapshots: NDArray = field(repr=False)  # (n_stored, size)
    stride: int = 1

    @property
    def final(self) -> NDArray:
        return self.snapshots[-1]

    @property
    def grid(self) -> Grid:
        return self.problem.grid


class ShiftedSystem:
    """Sparse system matrix with an incomplete-LU preconditioner built once."""

    def __init__(self, matrix, drop_tol: float = 1e-12):
        self.matrix = sp.csc_matrix(matrix)
        self.n = self.matrix.shape[0]
        ilu = spla.spilu(self.matrix, drop_tol=drop_tol, fill_factor=20)
        self.preconditioner = spla.LinearOperator(self.matrix.shape, ilu.solve, dtype=self.matrix.dtype)

    def transpose(self) -> "ShiftedSystem":
        return ShiftedSystem(self.matrix.T)


def solve_linear(system, rhs, tol: float = DEFAULT_TOL, maxiter: int | None = None) -> NDArray:
    """Solve ``A x = rhs`` by preconditioned GMRES to ``||A x - rhs|| <= tol ||rhs||``.

    ``system`` is a :class:`ShiftedSystem`, a :class:`SparseOperator` or a sparse
    matrix. At most ``maxiter`` (default ``10 n``) Krylov steps are taken.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if isinstance(system, SparseOperator):
        system = system.matrix
    if not isinstance(system, ShiftedSystem):
        system = ShiftedSystem(system)
    rhs = np.asarray(rhs)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    n = system.n
    maxiter = 10 * n if maxiter is None else maxiter
    restart = min(n, 50)
    x, _ = spla.gmres(
        system.matrix, rhs, rtol=tol, atol=0.0, restart=restart,
        maxiter=max(1, -(-maxiter // restart)), M=system.preconditioner,
    )
    res = np.linalg.norm(system.matrix @ x - rhs) / bnorm
    if res > tol:
        # the preconditioned residual can meet rtol while the true one does not
        x, _ = spla.gmres(
            system.matrix, rhs, x0=x, rtol=0.1 * tol, atol=0.0, restart=restart,
            maxiter=max(1, -(-maxiter // restart)), M=system.preconditioner,
        )
        res = np.linalg.norm(system.matrix @ x - rhs) / bnorm
        if res > tol:
            raise LinearSolveError(f"GMRES stopped at relative residual {res:.3e} > {tol:.1e}", residual=res)
    return x


class ThetaStepper:
    """One-step map ``(I - theta dt D) u+ = (I + (1-theta) dt D) u + dt g``.

    Holds the implicit system (and its transpose, built lazily for adjoint
    sweeps) so repeated solves reuse one factorized preconditioner.
    """

    def __init__(self, problem: Problem, theta: float = 0.5, tol: float = DEFAULT_TOL):
        if not 0.5 <= theta <= 1.0:
            raise ValueError(f"theta must lie in [1/2, 1], got {theta}")
        self.problem = problem
        self.theta = float(theta)
        self.tol = tol
        D = problem.operator.matrix
        dt = problem.time_grid.dt
        eye = sp.identity(D.shape[0], format="csr")
        self.implicit = ShiftedSystem(eye - self.theta * dt * D)
        self.explicit = (eye + (1.0 - self.theta) * dt * D).tocsr()
        self._implicit_t = None
        t = problem.time_grid.nodes
        rho = np.asarray(problem.rho(t), dtype=float)
        # dt * [theta rho(t_{n+1}) + (1 - theta) rho(t_n)], n = 0..N-1
        self.weights = dt * (self.theta * rho[1:] + (1.0 - self.theta) * rho[:-1])

    @property
    def implicit_t(self) -> ShiftedSystem:
        if self._implicit_t is None:
            self._implicit_t = self.implicit.transpose()
        return self._implicit_t

    def solve(self, system, rhs, step):
        try:
            return solve_linear(system, rhs, self.tol)
        except LinearSolveError as exc:
            raise LinearSolveError(f"step {step}: {exc}", residual=exc.residual, step=step) from exc

    def march(self, f=None, source: Callable | None = None, stride: int = 1):
        """Run all steps; yields ``(step_index, u)`` for stored steps."""
        tg = self.problem.time_grid
        n = self.problem.grid.size
        u = np.zeros(n)
        yield 0, u.copy()
        t = tg.nodes
        g_prev = np.asarray(source(t[0]), dtype=float).ravel() if source is not None else None
        for k in range(tg.n_steps):
            rhs = self.explicit @ u
            if source is not None:
                g_next = np.asarray(source(t[k + 1]), dtype=float).ravel()
                rhs = rhs + tg.dt * (self.theta * g_next + (1.0 - self.theta) * g_prev)
                g_prev = g_next
            elif f is not None:
                rhs = rhs + self.weights[k] * f
            u = self.solve(self.implicit, rhs, k + 1)
            if (k + 1) % stride == 0 or k + 1 == tg.n_steps:
                yield k + 1, u.copy()

    def final(self, f) -> NDArray:
        u = None
        for _, u in self.march(f=f, stride=self.problem.time_grid.n_steps):
            pass
        return u

    def adjoint_final(self, r) -> NDArray:
        """Exact transpose of :meth:`final` applied to ``r``."""
        q = self.solve(self.implicit_t, np.asarray(r, dtype=float), self.problem.time_grid.n_steps)
        out = self.weights[-1] * q
        for k in range(self.problem.time_grid.n_steps - 2, -1, -1):
            q = self.solve(self.implicit_t, self.explicit.T @ q, k + 1)
            out = out + self.weights[k] * q
        return out


def solve_forward(
    problem: Problem,
    theta: float = 0.5,
    tol: float = DEFAULT_TOL,
    stride: int = 1,
    source: Callable | None = None,
) -> Trajectory:
    """Integrate the problem from ``u(0) = 0`` to ``T``.

    Parameters
    ----------
    problem : Problem
        Uses ``problem.rho * problem.f`` as the source unless ``source`` is given.
    theta : float
        1/2 is Crank-Nicolson (default), 1 is backward Euler.
    stride : int
        Store every ``stride``-th snapshot; ``t = T`` is always stored.
    source : callable, optional
        General source ``g(t) -> nodal array`` replacing the separable one.
    """
    if source is None and problem.f is None:
        raise ValueError("problem has no source: set problem.f or pass source=")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    stepper = ThetaStepper(problem, theta, tol)
    steps, snaps = [], []
    for k, u in stepper.march(f=problem.f, source=source, stride=stride):
        steps.append(k)
        snaps.append(u)
    times = problem.time_grid.nodes[steps]
    return Trajectory(problem, times, np.array(snaps), int(stride))


def observe_final(traj: Trajectory) -> NDArray:
    """The stored ``u(., T)``, as a caller-owned copy."""
    return traj.final.copy()


def make_problem(grid: Grid, coeffs: CoefficientSet, T: float, n_steps: int, rho, f=None) -> Problem:
    if not isinstance(rho, AmplitudeFunction):
        rho = AmplitudeFunction.constant(rho)
    if f is not None and callable(f):
        f = grid.evaluate(f)
    return Problem(grid, coeffs, TimeGrid(T, n_steps), rho, f)


def write_trajectory(traj: Trajectory, directory) -> Path:
    """Export snapshots as field CSVs plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = len(str(traj.problem.time_grid.n_steps))
    files = []
    for k, (t, u) in enumerate(zip(traj.times, traj.snapshots)):
        name = f"u_{k:0{width}d}.csv"
        write_field_csv(directory / name, traj.grid, u)
        files.append({"file": name, "t": float(t)})
    manifest = {
        "T": traj.problem.T,
        "n_steps": traj.problem.time_grid.n_steps,
        "stride": traj.stride,
        "grid": traj.grid.spec(),
        "files": files,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


__all__ = [
    "Field",
    "LinearSolveError",
    "Problem",
    "ShiftedSystem",
    "ThetaStepper",
    "TimeGrid",
    "Trajectory",
    "make_problem",
    "observe_final",
    "solve_forward",
    "solve_linear",
    "write_trajectory",
]
