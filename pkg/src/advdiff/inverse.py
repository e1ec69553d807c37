"""Recovering the spatial source factor ``f`` from the final state ``u(., T)``.

The discrete source-to-data map ``A: f -> u(., T)`` is the theta-scheme run
with source ``rho(t) f``. Its adjoint is the exact transpose of that
composition: a backward sweep with the transposed implicit system and a
``rho``-weighted accumulation. All inner products are the grid L2 ones; the
uniform cell weight cancels, so the Euclidean transpose is also the L2
adjoint.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla
from numpy.typing import NDArray
from scipy import integrate

from .forward import DEFAULT_TOL, Problem, ThetaStepper
from .grid import Grid, GridError, write_field_csv

log = logging.getLogger(__name__)

METHODS = ("cgne", "landweber", "tikhonov", "spectral")
DENSE_CAP = 4096


class DivergenceError(RuntimeError):
    """Landweber residual kept growing; the step size is too large."""


class SourceToFinalMap:
    """The linear map ``f -> u(., T)`` and its discrete adjoint for one problem."""

    def __init__(self, problem: Problem, theta: float = 0.5, tol: float = DEFAULT_TOL):
        self.problem = problem
        self.grid = problem.grid
        self.stepper = ThetaStepper(problem, theta, tol)
        self.n_forward = 0
        self.n_adjoint = 0

    @property
    def theta(self) -> float:
        return self.stepper.theta

    def __call__(self, f) -> NDArray:
        self.n_forward += 1
        f = np.asarray(f, dtype=float).ravel()
        if not np.any(f):
            return np.zeros_like(f)
        return self.stepper.final(f)

    def adjoint(self, r) -> NDArray:
        self.n_adjoint += 1
        r = np.asarray(r, dtype=float).ravel()
        if not np.any(r):
            return np.zeros_like(r)
        return self.stepper.adjoint_final(r)

    def as_linear_operator(self) -> spla.LinearOperator:
        n = self.grid.size
        return spla.LinearOperator((n, n), matvec=self, rmatvec=self.adjoint, dtype=float)

    def dense(self) -> NDArray:
        """Column-by-column assembly; ``grid.size`` forward runs."""
        n = self.grid.size
        cols = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            cols[:, j] = self(e)
            e[j] = 0.0
        return cols

    def norm_estimate(self, steps: int = 20, seed: int = 0) -> float:
        """Power iteration on ``A* A`` from a fixed random start."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.grid.size)
        v /= self.grid.norm(v)
        lam = 0.0
        for _ in range(steps):
            w = self.adjoint(self(v))
            lam = self.grid.norm(w)
            if lam == 0.0:
                return 0.0
            v = w / lam
        return float(np.sqrt(lam))


def forward_map(f, problem: Problem, theta: float = 0.5, tol: float = DEFAULT_TOL) -> NDArray:
    """``u(., T)`` for source ``problem.rho * f``; linear in ``f``."""
    return SourceToFinalMap(problem, theta, tol)(f)


def adjoint_map(r, problem: Problem, theta: float = 0.5, tol: float = DEFAULT_TOL) -> NDArray:
    """Exact discrete adjoint of :func:`forward_map`."""
    return SourceToFinalMap(problem, theta, tol).adjoint(r)


def add_noise(data, delta: float, seed, grid: Grid | None = None) -> NDArray:
    """Additive Gaussian noise rescaled so ``||noise|| = delta ||data||`` exactly."""
    if delta < 0:
        raise ValueError(f"noise level must be non-negative, got {delta}")
    data = np.asarray(data, dtype=float).ravel()
    if delta == 0.0 or not np.any(data):
        return data.copy()
    eta = np.random.default_rng(seed).standard_normal(data.size)
    eta *= delta * np.linalg.norm(data) / np.linalg.norm(eta)
    return data + eta


def error_metrics(f_est, f_true, grid: Grid) -> dict:
    """Relative L2 error (absolute, flagged, when ``f_true`` vanishes) and max error."""
    f_est = np.asarray(f_est).ravel()
    f_true = np.asarray(f_true).ravel()
    if f_est.size != grid.size or f_true.size != grid.size:
        raise GridError("fields do not match the grid")
    diff = grid.norm(f_est - f_true)
    ref = grid.norm(f_true)
    absolute = ref == 0.0
    return {
        "rel_l2": float(diff if absolute else diff / ref),
        "max_abs": float(np.max(np.abs(f_est - f_true))),
        "absolute": bool(absolute),
    }


@dataclass
class InverseRun:
    """Inputs of one reconstruction.

    ``data`` is the observed final state. ``noise_level`` (relative) enables
    the discrepancy stop ``||A f - d|| <= tau * noise_level * ||d||``.
    """

    problem: Problem
    data: NDArray
    noise_level: float = 0.0
    method: str = "cgne"
    max_iter: int = 50
    tau: float = 1.1
    alpha: float | None = None
    step: float | None = None
    n_modes: int | None = None
    seed: int | None = None
    f_true: NDArray | None = None
    theta: float = 0.5
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != self.problem.grid.size:
            raise GridError("data does not match the grid")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.noise_level > 0 and not self.tau > 1:
            raise ValueError(f"discrepancy factor tau must exceed 1, got {self.tau}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError("max_iter must be a non-negative integer")

    @property
    def grid(self) -> Grid:
        return self.problem.grid

    def discrepancy_level(self) -> float:
        if self.noise_level <= 0:
            return 0.0
        return self.tau * self.noise_level * self.grid.norm(self.data)


@dataclass
class ReconstructionResult:
    f_est: NDArray = field(repr=False)
    iterations: int
    residual: float
    stopping_reason: str
    residual_history: list = field(default_factory=list, repr=False)
    error_history: list = field(default_factory=list, repr=False)
    metrics: dict | None = None
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "stopping_reason": self.stopping_reason,
            "metrics": self.metrics,
            "info": self.info,
        }

    def write(self, directory, grid: Grid) -> None:
        """``summary.json``, ``f_est.csv`` and ``residuals.csv`` in ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        write_field_csv(directory / "f_est.csv", grid, self.f_est)
        with open(directory / "residuals.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "residual", "error_if_known"])
            for k, r in enumerate(self.residual_history):
                err = self.error_history[k] if k < len(self.error_history) else ""
                writer.writerow([k, f"{r:.17g}", f"{err:.17g}" if err != "" else ""])


def _finish(run: InverseRun, A: SourceToFinalMap, f, iterations, reason, res_hist, err_hist, **info):
    residual = run.grid.norm(A(f) - run.data)
    metrics = error_metrics(f, run.f_true, run.grid) if run.f_true is not None else None
    info.setdefault("method", run.method)
    info["forward_solves"] = A.n_forward
    info["adjoint_solves"] = A.n_adjoint
    return ReconstructionResult(f, iterations, float(residual), reason, res_hist, err_hist, metrics, info)


def _error(run: InverseRun, f):
    if run.f_true is None:
        return None
    return error_metrics(f, run.f_true, run.grid)["rel_l2"]


ROUNDOFF_FLOOR = 1e-14


def _stop_reason(run, k, res, res_prev, level, stagnation):
    if level > 0 and res <= level:
        return "discrepancy"
    if res <= ROUNDOFF_FLOOR * np.linalg.norm(run.data) * np.sqrt(run.grid.cell_volume):
        return "roundoff"
    if res_prev is not None and abs(res_prev - res) <= stagnation * res_prev:
        return "stagnation"
    if k >= run.max_iter:
        return "max_iter"
    return None


def reconstruct_cgne(run: InverseRun, stagnation: float = 1e-12, gtol: float = 1e-10) -> ReconstructionResult:
    """Conjugate gradients on ``A* A f = A* d`` (CGLS form), started from zero.

    Stops at the discrepancy level (noisy data), at roundoff, when the residual stagnates,
    when the normal-equation residual ``||A* r||`` falls below ``gtol`` times
    its initial value, or at ``max_iter``.
    """
    grid = run.grid
    A = SourceToFinalMap(run.problem, run.theta, run.tol)
    f = np.zeros(grid.size)
    r = run.data.copy()
    res = grid.norm(r)
    res_hist = [res]
    err_hist = [] if run.f_true is None else [_error(run, f)]
    level = run.discrepancy_level()
    if res == 0.0:
        return _finish(run, A, f, 0, "zero data", res_hist, err_hist)
    s = A.adjoint(r)
    p = s.copy()
    gamma = grid.inner(s, s).real
    gamma0 = gamma
    reason = _stop_reason(run, 0, res, None, level, stagnation)
    k = 0
    while reason is None:
        q = A(p)
        qq = grid.inner(q, q).real
        if qq == 0.0:
            reason = "breakdown"
            break
        step = gamma / qq
        f = f + step * p
        r = r - step * q
        k += 1
        res_prev, res = res, grid.norm(r)
        res_hist.append(res)
        if run.f_true is not None:
            err_hist.append(_error(run, f))
        reason = _stop_reason(run, k, res, res_prev, level, stagnation)
        if reason is not None:
            break
        s = A.adjoint(r)
        gamma_new = grid.inner(s, s).real
        if gamma_new <= (gtol**2) * gamma0:
            reason = "normal residual"
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return _finish(run, A, f, k, reason, res_hist, err_hist)


def reconstruct_landweber(
    run: InverseRun,
    power_steps: int = 20,
    stagnation: float = 1e-12,
    growth_window: int = 10,
) -> ReconstructionResult:
    """Landweber iteration ``f <- f + w A*(d - A f)`` from zero.

    The step defaults to ``1 / ||A||^2`` with the norm from ``power_steps``
    power iterations. Raises :class:`DivergenceError` after ``growth_window``
    consecutive residual increases.
    """
    grid = run.grid
    A = SourceToFinalMap(run.problem, run.theta, run.tol)
    norm_est = A.norm_estimate(power_steps)
    step = run.step if run.step is not None else (1.0 / norm_est**2 if norm_est > 0 else 1.0)
    if not step > 0:
        raise ValueError("Landweber step must be positive")
    f = np.zeros(grid.size)
    r = run.data.copy()
    res = grid.norm(r)
    res_hist = [res]
    err_hist = [] if run.f_true is None else [_error(run, f)]
    level = run.discrepancy_level()
    info = {"step": step, "norm_estimate": norm_est}
    if res == 0.0:
        return _finish(run, A, f, 0, "zero data", res_hist, err_hist, **info)
    reason = _stop_reason(run, 0, res, None, level, stagnation)
    k = 0
    growth = 0
    while reason is None:
        f = f + step * A.adjoint(r)
        r = run.data - A(f)
        k += 1
        res_prev, res = res, grid.norm(r)
        res_hist.append(res)
        if run.f_true is not None:
            err_hist.append(_error(run, f))
        growth = growth + 1 if res > res_prev else 0
        if growth >= growth_window:
            raise DivergenceError(
                f"residual grew for {growth} consecutive steps (iteration {k}, residual {res:.3e}, "
                f"step {step:.3e}, 2/||A||^2 ~ {2.0 / norm_est**2:.3e})"
            )
        reason = _stop_reason(run, k, res, res_prev, level, stagnation)
    return _finish(run, A, f, k, reason, res_hist, err_hist, **info)


def reconstruct_tikhonov(run: InverseRun, alpha: float | None = None, tol: float = 1e-10) -> ReconstructionResult:
    """Solve ``(A* A + alpha I) f = A* d`` by matrix-free conjugate gradients."""
    alpha = run.alpha if alpha is None else alpha
    if alpha is None or not alpha > 0:
        raise ValueError(f"Tikhonov parameter must be positive, got {alpha}")
    grid = run.grid
    n = grid.size
    A = SourceToFinalMap(run.problem, run.theta, run.tol)
    rhs = A.adjoint(run.data)
    if not np.any(rhs):
        return _finish(run, A, np.zeros(n), 0, "zero data", [grid.norm(run.data)], [], alpha=alpha)
    normal = spla.LinearOperator((n, n), matvec=lambda v: A.adjoint(A(v)) + alpha * v, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    f, info = spla.cg(normal, rhs, rtol=tol, atol=0.0, maxiter=max(run.max_iter, 10 * n), callback=tick)
    if info != 0:
        raise RuntimeError(f"CG on the regularized normal equations did not converge (info={info})")
    return _finish(run, A, f, count[0], "converged", [grid.norm(run.data)], [], alpha=alpha,
                   rhs_norm=grid.norm(rhs))


def _dirichlet_eigenpairs(problem: Problem):
    """Eigenvalues ``lam`` (ascending) of ``-D`` with L2-orthonormal eigenvectors."""
    op = problem.operator
    if not op.symmetric:
        raise ValueError("spectral reconstruction needs a symmetric operator (symmetry_flag unset: b != 0)")
    if op.n > DENSE_CAP:
        raise ValueError(f"dense eigensolve capped at {DENSE_CAP} unknowns")
    lam, vecs = la.eigh(-op.toarray())
    return lam, vecs / np.sqrt(problem.grid.cell_volume)


def scheme_response(problem: Problem, lam: NDArray, theta: float = 0.5) -> NDArray:
    """Final value of the theta-scheme for ``y' = -lam y + rho(t)``, ``y(0) = 0``.

    This is the eigenvalue of the discrete map on the mode with eigenvalue
    ``lam`` of ``-D``.
    """
    tg = problem.time_grid
    lam = np.asarray(lam, dtype=float)
    t = tg.nodes
    rho = np.asarray(problem.rho(t), dtype=float)
    w = tg.dt * (theta * rho[1:] + (1.0 - theta) * rho[:-1])
    y = np.zeros_like(lam)
    amp = 1.0 - (1.0 - theta) * tg.dt * lam
    inv = 1.0 / (1.0 + theta * tg.dt * lam)
    for k in range(tg.n_steps):
        y = (amp * y + w[k]) * inv
    return y


def continuous_response(problem: Problem, lam: NDArray) -> NDArray:
    """``int_0^T rho(t) exp(-lam (T - t)) dt`` for each eigenvalue."""
    T = problem.T
    rho = problem.rho
    out = []
    for mu in np.atleast_1d(lam):
        # boundary layer of width 1/mu at t = T
        layer = [T - 1.0 / mu] if mu > 1.0 / T else None
        val, _ = integrate.quad(lambda t: rho(t) * np.exp(-mu * (T - t)), 0.0, T,
                                epsabs=0.0, epsrel=1e-13, limit=500, points=layer)
        out.append(val)
    return np.array(out)


def reconstruct_spectral(run: InverseRun, n_modes: int | None = None, denominator: str = "scheme") -> ReconstructionResult:
    """Truncated eigen-expansion ``f = sum_n (d, phi_n) / sigma_n phi_n``.

    Needs ``b = 0``. ``sigma_n`` is the response of mode ``n``: by default
    that of the time-stepping scheme itself (``denominator="scheme"``), so
    discrete-exact data are inverted exactly; ``"continuous"`` uses
    ``int_0^T rho(t) exp(-lam_n (T - t)) dt``.
    """
    n_modes = run.n_modes if n_modes is None else n_modes
    grid = run.grid
    n_modes = grid.size if n_modes is None else int(n_modes)
    if not 1 <= n_modes <= grid.size:
        raise ValueError(f"n_modes must lie in [1, {grid.size}], got {n_modes}")
    lam, phi = _dirichlet_eigenpairs(run.problem)
    lam, phi = lam[:n_modes], phi[:, :n_modes]
    if denominator == "scheme":
        sigma = scheme_response(run.problem, lam, run.theta)
    elif denominator == "continuous":
        sigma = continuous_response(run.problem, lam)
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    if np.any(sigma <= 0):
        bad = int(np.argmin(sigma))
        raise ValueError(f"mode {bad} has non-positive response {sigma[bad]:.3e}; is rho positive?")
    coef = grid.cell_volume * (phi.T @ run.data) / sigma
    f = phi @ coef
    A = SourceToFinalMap(run.problem, run.theta, run.tol)
    return _finish(run, A, f, 0, "direct", [grid.norm(run.data)], [], n_modes=n_modes,
                   denominator=denominator, coefficients=[float(c) for c in coef[: min(n_modes, 10)]])


def reconstruct(run: InverseRun) -> ReconstructionResult:
    if run.method == "cgne":
        return reconstruct_cgne(run)
    if run.method == "landweber":
        return reconstruct_landweber(run)
    if run.method == "tikhonov":
        return reconstruct_tikhonov(run)
    return reconstruct_spectral(run)


def _semidiscrete_map(problem: Problem) -> NDArray:
    """``int_0^T rho(t) expm((T - t) D) dt``: the map with exact time integration."""
    D = problem.operator.toarray()
    T = problem.T
    rho = problem.rho
    val, _ = integrate.quad_vec(lambda t: rho(t) * la.expm((T - t) * D), 0.0, T,
                                epsabs=1e-15, epsrel=1e-12, norm="max")
    return val


@dataclass
class Spectrum:
    largest: NDArray
    smallest: NDArray
    values: NDArray | None = None  # full set, dense mode only
    closed_form: NDArray | None = None
    scheme_form: NDArray | None = None
    method: str = "dense"
    propagator: str = "scheme"


def singular_spectrum(
    problem: Problem,
    k: int,
    propagator: str = "scheme",
    method: str = "auto",
    theta: float = 0.5,
    tol: float = DEFAULT_TOL,
) -> Spectrum:
    """Extreme singular values of the source-to-data map, in decreasing order.

    ``propagator="scheme"`` is the theta-scheme map used by the
    reconstructions; ``"exact"`` integrates the semi-discrete system exactly
    in time (dense only). In the symmetric case the result also carries
    ``closed_form = |int_0^T rho(t) exp(-lam_n (T - t)) dt|`` and the scheme's
    own modal response, both on the discrete eigenvalues and sorted
    decreasingly.
    """
    n = problem.grid.size
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    k = min(int(k), n)
    if method == "auto":
        method = "dense" if n <= DENSE_CAP else "iterative"
    if method == "dense":
        if n > DENSE_CAP:
            raise ValueError(f"{n} unknowns exceed the dense cap {DENSE_CAP}; use method='iterative'")
        if propagator == "scheme":
            mat = SourceToFinalMap(problem, theta, tol).dense()
        elif propagator == "exact":
            mat = _semidiscrete_map(problem)
        else:
            raise ValueError(f"unknown propagator {propagator!r}")
        values = la.svdvals(mat)
        largest, smallest = values[:k], values[-k:]
    elif method == "iterative":
        if propagator != "scheme":
            raise ValueError("iterative spectra are only available for the scheme propagator")
        values = None
        op = SourceToFinalMap(problem, theta, tol).as_linear_operator()
        kk = min(k, n - 1)
        try:
            largest = np.sort(spla.svds(op, k=kk, which="LM", return_singular_vectors=False, random_state=0))[::-1]
            smallest = np.sort(spla.svds(op, k=kk, which="SM", return_singular_vectors=False, random_state=0))[::-1]
        except spla.ArpackNoConvergence as exc:
            raise RuntimeError(f"Lanczos iteration did not converge: {exc}") from exc
    else:
        raise ValueError(f"unknown method {method!r}")

    closed = scheme = None
    if problem.operator.symmetric and problem.operator.n <= DENSE_CAP:
        lam, _ = _dirichlet_eigenpairs(problem)
        closed = np.sort(np.abs(continuous_response(problem, lam)))[::-1]
        scheme = np.sort(np.abs(scheme_response(problem, lam, theta)))[::-1]
    return Spectrum(largest, smallest, values, closed, scheme, method, propagator)
