"""Ground-truth spatial sources for synthetic experiments."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .grid import Grid

KINDS = ("zero", "eigenmode", "two-mode", "gaussian", "piecewise")


def _mode(grid: Grid, modes) -> NDArray:
    modes = list(np.atleast_1d(modes))
    if len(modes) == 1:
        modes = modes * grid.dim
    out = np.ones(grid.size)
    for k, (lo, hi) in enumerate(grid.extents):
        x = grid.nodes()[:, k]
        out = out * np.sin(modes[k] * np.pi * (x - lo) / (hi - lo))
    return out


def dirichlet_eigenvalue(grid: Grid, modes, diffusivity: float = 1.0) -> float:
    """``a * sum_k (m_k pi / L_k)^2``: continuous eigenvalue of ``-a Laplacian``."""
    modes = list(np.atleast_1d(modes))
    if len(modes) == 1:
        modes = modes * grid.dim
    return float(diffusivity * sum((m * np.pi / (hi - lo)) ** 2 for m, (lo, hi) in zip(modes, grid.extents)))


def source_field(grid: Grid, kind: str, scale: float = 1.0, mode=(1,), mode2=(3,), weight: float = 0.5,
                 center=None, width: float = 0.1, box=None) -> NDArray:
    """Sample a catalog source on the interior nodes.

    ``eigenmode``  product of ``sin(m_k pi (x_k - lo_k) / L_k)``
    ``two-mode``   eigenmode ``mode`` plus ``weight`` times eigenmode ``mode2``
    ``gaussian``   ``exp(-|x - center|^2 / (2 width^2))``
    ``piecewise``  indicator of the axis-aligned ``box`` (discontinuous)
    """
    if kind == "zero":
        out = np.zeros(grid.size)
    elif kind == "eigenmode":
        out = _mode(grid, mode)
    elif kind == "two-mode":
        out = _mode(grid, mode) + weight * _mode(grid, mode2)
    elif kind == "gaussian":
        mid = [0.5 * (lo + hi) for lo, hi in grid.extents]
        center = mid if center is None or len(center) == 0 else list(center)
        r2 = np.sum((grid.nodes() - np.asarray(center)[None, :]) ** 2, axis=1)
        out = np.exp(-r2 / (2.0 * width**2))
    elif kind == "piecewise":
        if box is None or len(box) == 0:
            box = [(lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo)) for lo, hi in grid.extents]
        inside = np.ones(grid.size, dtype=bool)
        for k, (a, b) in enumerate(box):
            x = grid.nodes()[:, k]
            inside &= (x >= a) & (x <= b)
        out = inside.astype(float)
    else:
        raise ValueError(f"unknown source kind {kind!r}; expected one of {KINDS}")
    return scale * out
