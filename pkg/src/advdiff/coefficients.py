"""Coefficient fields of the operator ``L u = div(a grad u) + b . grad u + c u``.

The diffusion matrix ``a`` is sampled on the closed node set (boundary nodes
included) because the flux discretization averages it onto cell faces next to
the boundary. ``b`` and ``c`` are sampled on interior nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .grid import Grid, GridError


class EllipticityError(ValueError):
    """Raised when the diffusion matrix is not uniformly positive definite."""


@dataclass(frozen=True)
class Profile:
    """Closed-form scalar coefficient from the built-in catalog.

    ``constant``:   value
    ``affine``:     value + sum_k slope[k] * x_k
    ``sinusoidal``: value + amplitude * sum_k sin(wavenumber[k] * pi * x_k)
    """

    kind: str = "constant"
    value: float = 0.0
    slope: tuple[float, ...] = ()
    amplitude: float = 0.0
    wavenumber: tuple[float, ...] = ()

    KINDS = ("constant", "affine", "sinusoidal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; expected one of {self.KINDS}")

    def __call__(self, *coords):
        out = np.full(np.shape(coords[0]), float(self.value))
        if self.kind == "affine":
            slope = _per_axis(self.slope, len(coords))
            for k, x in enumerate(coords):
                out = out + slope[k] * x
        elif self.kind == "sinusoidal":
            wn = _per_axis(self.wavenumber, len(coords), default=1.0)
            for k, x in enumerate(coords):
                out = out + self.amplitude * np.sin(wn[k] * np.pi * x)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "slope": list(self.slope),
            "amplitude": self.amplitude,
            "wavenumber": list(self.wavenumber),
        }


def _per_axis(vals, dim, default=0.0):
    vals = list(np.atleast_1d(vals)) if np.size(vals) else []
    if len(vals) == 1 and dim > 1:
        vals = vals * dim
    vals = vals + [default] * (dim - len(vals))
    return [float(v) for v in vals[:dim]]


@dataclass(frozen=True)
class CoefficientSet:
    grid: Grid
    a: NDArray = field(repr=False)  # (closed_size, d, d)
    b: NDArray = field(repr=False)  # (size, d)
    c: NDArray = field(repr=False)  # (size,)
    a0: float = 0.0

    @property
    def has_advection(self) -> bool:
        return bool(np.any(self.b != 0.0))

    @property
    def c_sup(self) -> float:
        return float(np.max(np.abs(self.c)))

    @property
    def peclet(self) -> float:
        """Grid Peclet number ``max|b| h / (2 a0)``."""
        if not self.has_advection:
            return 0.0
        h = max(self.grid.h)
        return float(np.max(np.abs(self.b)) * h / (2.0 * self.a0))


def closed_size(grid: Grid) -> int:
    return int(np.prod([n + 2 for n in grid.shape]))


def _sample(grid: Grid, spec, closed: bool) -> NDArray:
    """Scalar field from a number, a callable of the coordinates, or an array."""
    n = closed_size(grid) if closed else grid.size
    if callable(spec):
        return grid.evaluate(spec, closed=closed)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    arr = arr.ravel()
    if arr.size != n:
        where = "closed" if closed else "interior"
        raise GridError(f"coefficient array has {arr.size} values, expected {n} ({where} nodes)")
    return arr


def _diffusion_tensor(grid: Grid, a) -> NDArray:
    d = grid.dim
    nc = closed_size(grid)
    if not callable(a):
        arr = np.asarray(a, dtype=float)
        if arr.shape == (nc, d, d):
            return arr.copy()
        if arr.shape == (d, d):
            return np.broadcast_to(arr, (nc, d, d)).copy()
    # scalar field times the identity
    scalar = _sample(grid, a, closed=True)
    return scalar[:, None, None] * np.eye(d)[None, :, :]


def check_ellipticity(coeffs_or_grid, a: NDArray | None = None) -> float:
    """Smallest eigenvalue of the diffusion matrix over all (closed) nodes.

    Accepts a :class:`CoefficientSet`, or a grid together with a raw tensor
    array of shape ``(closed_size, d, d)``.

    Raises
    ------
    EllipticityError
        If ``a`` is not symmetric, or its smallest eigenvalue is not positive;
        the message names the offending node.
    """
    if isinstance(coeffs_or_grid, CoefficientSet):
        grid, a = coeffs_or_grid.grid, coeffs_or_grid.a
    else:
        grid = coeffs_or_grid
    closed_nodes = np.stack([m.ravel() for m in grid.mesh(closed=True)], axis=1)
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    if np.any(asym > 0.0):
        k = int(np.argmax(asym))
        raise EllipticityError(f"diffusion matrix is not symmetric at node {tuple(closed_nodes[k])}")
    eig_min = np.linalg.eigvalsh(a)[:, 0]
    k = int(np.argmin(eig_min))
    if not eig_min[k] > 0.0:
        raise EllipticityError(
            f"diffusion matrix not positive definite at node {tuple(closed_nodes[k])}: "
            f"smallest eigenvalue {eig_min[k]:.6g}"
        )
    return float(eig_min[k])


def build_coefficients(grid: Grid, a=1.0, b=0.0, c=0.0) -> CoefficientSet:
    """Sample coefficients on ``grid`` and certify ellipticity.

    Each argument may be a number, a callable ``f(x[, y])`` (for instance a
    :class:`Profile`) or a nodal array. ``a`` may also be a constant ``(d, d)``
    matrix or a per-node ``(closed_size, d, d)`` array; ``b`` a length-``d``
    sequence of per-axis specs.
    """
    d = grid.dim
    a_arr = _diffusion_tensor(grid, a)
    a0 = check_ellipticity(grid, a_arr)

    b_arr = None
    if not callable(b):
        raw = np.asarray(b, dtype=object if isinstance(b, (list, tuple)) else float)
        if raw.dtype != object and raw.shape == (grid.size, d):
            b_arr = raw.astype(float)
    if b_arr is None:
        comps = list(b) if isinstance(b, (list, tuple)) else [b] * d
        if len(comps) != d:
            raise GridError(f"advection needs {d} components, got {len(comps)}")
        b_arr = np.stack([_sample(grid, comp, closed=False) for comp in comps], axis=1)

    c_arr = _sample(grid, c, closed=False)
    return CoefficientSet(grid=grid, a=a_arr, b=b_arr, c=c_arr, a0=a0)
