"""Bravais lattices, periodic node grids, and finite-difference operators.

Scalar fields live on uniform grids over the unit cell of a Bravais
lattice.  Node (m_1, ..., m_n) sits at fractional coordinates
(m_1/N_1, ..., m_n/N_n), stored in row-major (lexicographic) order.
The stencil operators (Laplacian, Hessian) are second-order central
differences with periodic wrap-around and are restricted to orthogonal
lattice bases, where the standard per-axis stencils are consistent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BravaisLattice",
    "PeriodicGrid",
    "ScalarField",
    "MatrixField",
    "wrap_fractional",
    "reciprocal_basis",
    "laplacian_apply",
    "hessian",
]


@dataclass(frozen=True)
class BravaisLattice:
    """n linearly independent basis vectors spanning a periodic unit cell.

    ``basis`` is an (n, n) array whose *rows* are the lattice vectors
    e_1, ..., e_n.  A point with fractional coordinates f maps to the
    Cartesian point f @ basis.
    """

    basis: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise ValueError("basis must be a square matrix of row vectors")
        n = basis.shape[0]
        if n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2, or 3, got {n}")
        if abs(np.linalg.det(basis)) < 1e-14:
            raise ValueError("basis vectors are linearly dependent")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    def is_orthogonal(self, tol: float = 1e-12) -> bool:
        g = self.basis @ self.basis.T
        off = g - np.diag(np.diag(g))
        return float(np.max(np.abs(off))) <= tol * float(np.max(np.diag(g)))

    def cartesian(self, frac):
        """Map fractional coordinates (..., n) to Cartesian points."""
        return np.asarray(frac, dtype=float) @ self.basis

    def fractional(self, x):
        """Map Cartesian points (..., n) to fractional coordinates."""
        x = np.asarray(x, dtype=float)
        return np.linalg.solve(self.basis.T, x[..., None])[..., 0]


def wrap_fractional(lattice: BravaisLattice, x):
    """Fractional coordinates of x reduced to the fundamental cell [0,1)^n."""
    frac = lattice.fractional(x)
    return frac - np.floor(frac)


def reciprocal_basis(lattice: BravaisLattice) -> np.ndarray:
    """Rows g_j of the reciprocal basis, satisfying e_i . g_j = 2*pi*delta_ij."""
    return 2.0 * np.pi * np.linalg.inv(lattice.basis).T


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform node grid over the unit cell of a Bravais lattice."""

    lattice: BravaisLattice
    resolution: tuple

    def __post_init__(self):
        res = tuple(int(N) for N in np.atleast_1d(self.resolution))
        object.__setattr__(self, "resolution", res)
        if len(res) != self.lattice.dim:
            raise ValueError("resolution must give one node count per axis")
        if any(N < 4 for N in res):
            raise ValueError("need at least 4 nodes per axis")

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def node_volume(self) -> float:
        return self.lattice.cell_volume / self.num_nodes

    def axis_spacings(self) -> np.ndarray:
        """Physical spacing |e_a| / N_a along each axis."""
        lengths = np.linalg.norm(self.lattice.basis, axis=1)
        return lengths / np.asarray(self.resolution, dtype=float)

    def fractional_nodes(self) -> np.ndarray:
        axes = [np.arange(N) / N for N in self.resolution]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cartesian_nodes(self) -> np.ndarray:
        return self.lattice.cartesian(self.fractional_nodes())


@dataclass(frozen=True)
class ScalarField:
    """One value per grid node, stored with the grid's row-major shape."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class MatrixField:
    """One symmetric n x n matrix per grid node."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        n = self.grid.dim
        if vals.shape != self.grid.shape + (n, n):
            raise ValueError("matrix field shape mismatch")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        skew = np.max(np.abs(vals - np.swapaxes(vals, -1, -2))) if vals.size else 0.0
        if skew > 1e-12 * max(1.0, float(np.max(np.abs(vals)))):
            raise ValueError("matrix field must be symmetric at every node")
        object.__setattr__(self, "values", vals)

    def trace(self) -> np.ndarray:
        return np.trace(self.values, axis1=-2, axis2=-1)


def _require_orthogonal(grid: PeriodicGrid):
    if not grid.lattice.is_orthogonal():
        raise ValueError("stencil operators require an orthogonal lattice basis")


def laplacian_apply(field: ScalarField) -> ScalarField:
    """Periodic second-order Laplacian, summed per-axis second differences."""
    _require_orthogonal(field.grid)
    u = field.values
    h = field.grid.axis_spacings()
    out = np.zeros_like(u)
    for a in range(field.grid.dim):
        out += (np.roll(u, -1, axis=a) - 2.0 * u + np.roll(u, 1, axis=a)) / h[a] ** 2
    return ScalarField(field.grid, out)


def hessian(field: ScalarField) -> MatrixField:
    """Periodic central-difference Hessian.

    Diagonal entries are the per-axis second differences (so the trace
    of the result reproduces ``laplacian_apply`` to rounding error);
    off-diagonal entries are the standard four-point cross differences.
    """
    _require_orthogonal(field.grid)
    u = field.values
    grid = field.grid
    n = grid.dim
    h = grid.axis_spacings()
    H = np.zeros(grid.shape + (n, n))
    for a in range(n):
        H[..., a, a] = (np.roll(u, -1, axis=a) - 2.0 * u + np.roll(u, 1, axis=a)) / h[a] ** 2
    for a in range(n):
        for b in range(a + 1, n):
            upp = np.roll(np.roll(u, -1, axis=a), -1, axis=b)
            upm = np.roll(np.roll(u, -1, axis=a), 1, axis=b)
            ump = np.roll(np.roll(u, 1, axis=a), -1, axis=b)
            umm = np.roll(np.roll(u, 1, axis=a), 1, axis=b)
            H[..., a, b] = (upp - upm - ump + umm) / (4.0 * h[a] * h[b])
            H[..., b, a] = H[..., a, b]
    return MatrixField(grid, H)
