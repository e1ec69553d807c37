"""Finite-difference assembly of the elliptic operator with Dirichlet elimination."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .coefficients import CoefficientSet
from .grid import Field, Grid, GridError


class PecletWarning(RuntimeWarning):
    """Grid Peclet number >= 1: central advection may oscillate."""


@dataclass(frozen=True)
class SparseOperator:
    """Assembled discrete operator, stored as CSR.

    ``symmetric`` is set at assembly time when the advection field vanishes;
    the matrix then equals its transpose exactly.
    """

    matrix: sp.csr_matrix
    symmetric: bool = False
    grid: Grid | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def triplets(self) -> tuple[NDArray, NDArray, NDArray]:
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    @classmethod
    def from_triplets(cls, n, rows, cols, values, symmetric=False, grid=None):
        mat = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
        return cls(matrix=mat, symmetric=symmetric, grid=grid)

    def toarray(self) -> NDArray:
        return self.matrix.toarray()


def _offset_slices(n: int, s: int):
    """(target, source) slices pairing node i with neighbour i + s inside [0, n)."""
    if s == 0:
        return slice(None), slice(None)
    if s > 0:
        return slice(0, n - s), slice(s, n)
    return slice(-s, n), slice(0, n + s)


def assemble_operator(grid: Grid, coeffs: CoefficientSet) -> SparseOperator:
    """Discretize ``div(a grad u) + b . grad u + c u`` with u = 0 on the boundary.

    Diagonal diffusion uses face fluxes with arithmetic face averages of
    ``a``; off-diagonal diffusion and advection use central differences.
    Second order for smooth coefficients.
    """
    if coeffs.grid != grid:
        raise GridError("coefficients were sampled on a different grid")
    d = grid.dim
    shape = grid.shape
    h = grid.h
    if coeffs.a.shape[1:] != (d, d) or coeffs.b.shape != (grid.size, d) or coeffs.c.shape != (grid.size,):
        raise GridError("coefficient array shapes do not match the grid")
    if np.any(coeffs.a != np.swapaxes(coeffs.a, 1, 2)):
        raise GridError("diffusion matrix must be symmetric")

    a = coeffs.a.reshape(tuple(n + 2 for n in shape) + (d, d))
    b = coeffs.b.reshape(shape + (d,))
    inner = tuple(slice(1, n + 1) for n in shape)

    def a_shifted(i, j, shift):
        """a_ij at closed index P + shift for every interior P."""
        sl = tuple(slice(1 + s, n + 1 + s) for n, s in zip(shape, shift))
        return a[sl + (i, j)]

    stencil: dict[tuple[int, ...], NDArray] = {}

    def add(offset, values):
        offset = tuple(offset)
        stencil[offset] = stencil.get(offset, 0.0) + values

    diag = coeffs.c.reshape(shape).astype(float).copy()
    for k in range(d):
        e = np.zeros(d, dtype=int)
        e[k] = 1
        a_here = a[inner + (k, k)]
        face_plus = (a_here + a_shifted(k, k, e)) / 2.0
        face_minus = (a_shifted(k, k, -e) + a_here) / 2.0
        add(e, face_plus / h[k] ** 2)
        add(-e, face_minus / h[k] ** 2)
        diag = diag - (face_plus + face_minus) / h[k] ** 2

    if d == 2:
        for sx, sy in itertools.product((1, -1), repeat=2):
            scale = sx * sy / (4.0 * h[0] * h[1])
            add((sx, sy), scale * (a_shifted(0, 1, (sx, 0)) + a_shifted(1, 0, (0, sy))))

    symmetric = not coeffs.has_advection
    if not symmetric:
        for k in range(d):
            e = np.zeros(d, dtype=int)
            e[k] = 1
            add(e, b[..., k] / (2.0 * h[k]))
            add(-e, -b[..., k] / (2.0 * h[k]))
        if coeffs.peclet >= 1.0:
            warnings.warn(
                f"grid Peclet number {coeffs.peclet:.3g} >= 1; central advection may oscillate",
                PecletWarning,
                stacklevel=2,
            )

    index = np.arange(grid.size).reshape(shape)
    rows, cols, vals = [index.ravel()], [index.ravel()], [diag.ravel()]
    for offset, values in stencil.items():
        tgt = tuple(_offset_slices(n, s)[0] for n, s in zip(shape, offset))
        src = tuple(_offset_slices(n, s)[1] for n, s in zip(shape, offset))
        rows.append(index[tgt].ravel())
        cols.append(index[src].ravel())
        vals.append(np.broadcast_to(values, shape)[tgt].ravel())
    return SparseOperator.from_triplets(
        grid.size,
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        symmetric=symmetric,
        grid=grid,
    )


def apply_operator(op: SparseOperator, v):
    """Matrix-vector product; returns a :class:`Field` if given one."""
    values = v.values if isinstance(v, Field) else np.asarray(v)
    if values.shape[0] != op.n:
        raise GridError(f"dimension mismatch: operator is {op.n}, vector is {values.shape[0]}")
    out = op.matrix @ values
    return Field(v.grid, out) if isinstance(v, Field) else out


def adjoint_operator(op: SparseOperator) -> SparseOperator:
    """Exact transpose; the discrete counterpart of the formal adjoint."""
    return SparseOperator(matrix=op.matrix.T.tocsr(), symmetric=op.symmetric, grid=op.grid)


def identity_operator(n: int) -> SparseOperator:
    return SparseOperator(matrix=sp.identity(n, format="csr"), symmetric=True)
