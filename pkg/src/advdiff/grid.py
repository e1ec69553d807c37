"""Structured grids on intervals and rectangles, nodal fields and their CSV form.

Unknowns live on interior nodes only; homogeneous Dirichlet data on the
boundary is implied. Nodes are ordered lexicographically (C order, last axis
fastest).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray


class GridError(ValueError):
    """Raised for invalid grid definitions or grid/field mismatches."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid of interior nodes on ``prod_k [lo_k, hi_k]``.

    Parameters
    ----------
    extents : tuple of (lo, hi) pairs, one per axis.
    n_interior : interior node count per axis.
    """

    extents: tuple[tuple[float, float], ...]
    n_interior: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.n_interior):
            raise GridError("extents and n_interior must have the same length")
        if self.dim not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got dim={self.dim}")
        for k, ((lo, hi), n) in enumerate(zip(self.extents, self.n_interior)):
            if int(n) != n or n < 2:
                raise GridError(f"n_interior[{k}] must be an integer >= 2, got {n}")
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise GridError(f"degenerate interval on axis {k}: [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.n_interior)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.n_interior)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n + 1) for (lo, hi), n in zip(self.extents, self.n_interior))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_coords(self, axis: int, closed: bool = False) -> NDArray[np.float64]:
        """Node coordinates along one axis; ``closed`` includes both boundary nodes."""
        lo, _ = self.extents[axis]
        n = self.n_interior[axis]
        h = self.h[axis]
        idx = np.arange(n + 2) if closed else np.arange(1, n + 1)
        return lo + idx * h

    def mesh(self, closed: bool = False) -> tuple[NDArray[np.float64], ...]:
        axes = [self.axis_coords(k, closed) for k in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def nodes(self) -> NDArray[np.float64]:
        """Interior node coordinates, shape ``(size, dim)``, in flat-index order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def flat_index(self, multi: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def inner(self, u: NDArray, v: NDArray) -> complex | float:
        """Discrete L2 inner product ``(u, v) = vol * sum(u * conj(v))``."""
        return self.cell_volume * np.vdot(v, u)

    def norm(self, u: NDArray) -> float:
        return float(np.sqrt(self.cell_volume) * np.linalg.norm(np.ravel(u)))

    def evaluate(self, func, closed: bool = False) -> NDArray:
        """Sample ``func(*coords)`` on the (interior or closed) node set, flattened."""
        return np.asarray(func(*self.mesh(closed)), dtype=float).ravel()

    def spec(self) -> dict:
        return {
            "dim": self.dim,
            "extents": [list(e) for e in self.extents],
            "n_interior": list(self.shape),
        }


def build_grid(dim: int, extents, n_interior) -> Grid:
    """Build a grid from loosely typed input.

    ``extents`` may be a single ``(lo, hi)`` pair in 1D; ``n_interior`` may be a
    scalar, which is then used on every axis.

    >>> build_grid(1, (0.0, 1.0), 3).h
    (0.25,)
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    ext = np.asarray(extents, dtype=float)
    if ext.shape == (2,):
        ext = ext[None, :]
    if ext.shape != (dim, 2):
        raise GridError(f"extents must provide one (lo, hi) pair per axis, got shape {ext.shape}")
    counts = np.atleast_1d(np.asarray(n_interior))
    if counts.size == 1:
        counts = np.repeat(counts, dim)
    if counts.shape != (dim,):
        raise GridError(f"n_interior must give one count per axis, got {counts.tolist()}")
    if not np.all(np.equal(np.mod(counts, 1), 0)):
        raise GridError(f"n_interior must be integers, got {counts.tolist()}")
    return Grid(
        extents=tuple((float(lo), float(hi)) for lo, hi in ext),
        n_interior=tuple(int(n) for n in counts),
    )


@dataclass
class Field:
    """Nodal values on the interior nodes of a grid."""

    grid: Grid
    values: NDArray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values).ravel()
        if self.values.size != self.grid.size:
            raise GridError(
                f"field has {self.values.size} values but grid has {self.grid.size} unknowns"
            )

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def write_field_csv(path, grid: Grid, values: NDArray) -> None:
    """Write nodal values as ``x[,y],value[,value_imag]`` rows, 17 significant digits."""
    values = np.asarray(values).ravel()
    if values.size != grid.size:
        raise GridError(f"field has {values.size} values but grid has {grid.size} unknowns")
    names = ["x", "y"][: grid.dim] + ["value"]
    cols = [grid.nodes()[:, k] for k in range(grid.dim)]
    if np.iscomplexobj(values):
        names.append("value_imag")
        cols += [values.real, values.imag]
    else:
        cols.append(values)
    table = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in table:
            writer.writerow([f"{v:.17g}" for v in row])


def read_field_csv(path, grid: Grid | None = None) -> NDArray:
    """Read a field CSV; checks node coordinates against ``grid`` when given."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if "value" not in header:
        raise GridError(f"{path}: missing 'value' column")
    rows = rows.reshape(-1, len(header))
    values = rows[:, header.index("value")]
    if "value_imag" in header:
        values = values + 1j * rows[:, header.index("value_imag")]
    if grid is not None:
        if values.size != grid.size:
            raise GridError(f"{path}: {values.size} rows, grid expects {grid.size}")
        coord_names = ["x", "y"][: grid.dim]
        if all(c in header for c in coord_names):
            coords = rows[:, [header.index(c) for c in coord_names]]
            if not np.allclose(coords, grid.nodes(), rtol=0.0, atol=1e-9 * max(grid.h)):
                raise GridError(f"{path}: node coordinates do not match the grid")
    return values
