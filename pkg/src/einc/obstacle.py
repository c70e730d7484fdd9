"""Piecewise-quadratic periodic obstacles.

An obstacle is the upper envelope of finitely many concave quadratic
pieces together with their translates over a (sub)lattice:

    phi(x) = sup_i sup_r  q_i(x + r),   q_i(y) = (y - d_i) . Q_i (y - d_i) / 2 + h_i

with Q_i <= 0.  The supremum over translates is evaluated exactly: the
translate coordinates are reduced modulo the translation basis and the
remaining candidates are enumerated inside a ball whose radius is
derived from a lower bound on the envelope, so no maximizing translate
can be missed.

Pieces with negative *semi*-definite Q must restrict their translations
to a sublattice spanning range(Q); translating a convex-direction
(null or positive) piece over the full lattice would make the envelope
degenerate or unbounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import BravaisLattice, PeriodicGrid, ScalarField

__all__ = [
    "UnboundedObstacle",
    "ZeroMatrix",
    "QuadraticPiece",
    "ConstantPiece",
    "Obstacle",
    "build_single",
    "build_laminate",
    "build_multi",
    "constant_obstacle",
    "sample",
]

_EIG_TOL = 1e-12


class UnboundedObstacle(Exception):
    """Raised when a translated piece makes the envelope unbounded/degenerate."""


class ZeroMatrix(ValueError):
    """Raised when a quadratic piece is built from Q = 0."""


@dataclass(frozen=True)
class QuadraticPiece:
    """Concave quadratic q(y) = (y-d).Q(y-d)/2 + h."""

    Q: np.ndarray
    d: np.ndarray
    h: float = 0.0
    translations: str = "range"  # "range" | "none"

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        d = np.atleast_1d(np.array(self.d, dtype=float))
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))):
            raise ValueError("Q must be symmetric")
        if d.shape != (Q.shape[0],):
            raise ValueError("d must have the same dimension as Q")
        if self.translations not in ("range", "none"):
            raise ValueError("translations must be 'range' or 'none'")
        Q.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "h", float(self.h))

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def value(self, points):
        z = np.asarray(points, dtype=float) - self.d
        return 0.5 * np.einsum("...i,ij,...j->...", z, self.Q, z) + self.h


@dataclass(frozen=True)
class ConstantPiece:
    """Constant piece q(y) = h (translation invariant)."""

    h: float

    def value(self, points):
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], float(self.h))


def _range_translation_basis(Q: np.ndarray, lattice: BravaisLattice | None) -> np.ndarray:
    """Basis vectors spanning range(Q) to translate a semi-definite piece over.

    Lattice basis vectors lying inside range(Q) are preferred (so a
    full-rank piece is translated over the full lattice); otherwise an
    orthonormal eigenbasis of range(Q) with unit step is used.
    """
    scale = max(1.0, float(np.max(np.abs(Q))))
    w, V = np.linalg.eigh(Q)
    if np.max(w) > _EIG_TOL * scale:
        raise UnboundedObstacle("piece has a convex direction; envelope is unbounded")
    rng = np.abs(w) > 1e-10 * scale
    rank = int(np.sum(rng))
    if rank == 0:
        raise ZeroMatrix("quadratic piece requires Q != 0")
    Vr = V[:, rng]  # columns span range(Q)
    if lattice is not None:
        P_null = np.eye(Q.shape[0]) - Vr @ Vr.T
        rows = [e for e in lattice.basis if np.linalg.norm(P_null @ e) <= 1e-10 * np.linalg.norm(e)]
        if len(rows) == rank and np.linalg.matrix_rank(np.array(rows), tol=1e-10) == rank:
            return np.array(rows)
    return Vr.T.copy()


@dataclass(frozen=True)
class Obstacle:
    """Upper envelope of translated quadratic/constant pieces."""

    pieces: tuple
    lattice: BravaisLattice | None = None
    # resolved per-piece translation bases ((m_i, n) arrays or None)
    translation_bases: tuple = field(default=None)

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ValueError("obstacle needs at least one piece")
        object.__setattr__(self, "pieces", pieces)
        if self.translation_bases is None:
            bases = []
            for p in pieces:
                if isinstance(p, ConstantPiece) or p.translations == "none":
                    bases.append(None)
                else:
                    bases.append(_range_translation_basis(p.Q, self.lattice))
            object.__setattr__(self, "translation_bases", tuple(bases))

    @property
    def dim(self) -> int:
        for p in self.pieces:
            if isinstance(p, QuadraticPiece):
                return p.dim
        if self.lattice is not None:
            return self.lattice.dim
        raise ValueError("dimension is undetermined for a purely constant obstacle")

    def evaluate(self, points):
        """Exact envelope value at Cartesian points of shape (..., n)."""
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        if squeeze:
            pts = pts[None, :]
        best = np.full(pts.shape[:-1], -np.inf)

        # First pass: a lower bound from the nearest translates.
        reduced = []
        for p, B in zip(self.pieces, self.translation_bases):
            if isinstance(p, ConstantPiece):
                np.maximum(best, p.h, out=best)
                reduced.append(None)
                continue
            if B is None:
                np.maximum(best, p.value(pts), out=best)
                reduced.append(None)
                continue
            # coordinates of the range-component of (x - d) in the basis B,
            # reduced to [0, 1)^m; the null component does not change q.
            t = (pts - p.d) @ np.linalg.pinv(B)
            t0 = t - np.floor(t)
            z = t0 @ B
            np.maximum(best, 0.5 * np.einsum("...i,ij,...j->...", z, p.Q, z) + p.h, out=best)
            reduced.append(t0)

        lb = float(np.min(best))
        # Second pass: enumerate every translate that could still reach the
        # envelope somewhere, i.e. |z| <= sqrt(2 (h - lb) / lam_min(-Q)).
        for p, B, t0 in zip(self.pieces, self.translation_bases, reduced):
            if t0 is None:
                continue
            scale = max(1.0, float(np.max(np.abs(p.Q))))
            w = np.linalg.eigvalsh(-p.Q)
            lam_min = float(np.min(w[w > 1e-10 * scale]))
            smin = float(np.min(np.linalg.svd(B, compute_uv=False)))
            gap = max(p.h - lb, 0.0)
            radius = np.sqrt(2.0 * gap / lam_min) / smin
            R = int(np.ceil(radius))
            if R > 64:
                raise UnboundedObstacle("translate enumeration radius blew up; envelope is nearly degenerate")
            m = B.shape[0]
            ranges = [np.arange(-R - 1, R + 1)] * m
            for nu in np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, m):
                z = (t0 + nu) @ B
                np.maximum(best, 0.5 * np.einsum("...i,ij,...j->...", z, p.Q, z) + p.h, out=best)

        return float(best[0]) if squeeze else best


def build_single(Q, lattice: BravaisLattice) -> Obstacle:
    """Envelope of one quadratic piece (Q <= 0, Q != 0, peak at the origin)
    translated over the lattice vectors lying in range(Q)."""
    Q = np.asarray(Q, dtype=float)
    piece = QuadraticPiece(Q, np.zeros(Q.shape[0]), 0.0, translations="range")
    return Obstacle((piece,), lattice)


def build_laminate(a: float, normal, lattice: BravaisLattice | None = None) -> Obstacle:
    """One-dimensional profile sup_nu a (x.n + nu)^2 / 2 along a unit normal."""
    if a >= 0:
        raise UnboundedObstacle("laminate profile requires a < 0")
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if nn < 1e-14:
        raise ZeroMatrix("laminate normal must be nonzero")
    n = n / nn
    piece = QuadraticPiece(a * np.outer(n, n), np.zeros(n.shape[0]), 0.0, translations="range")
    return Obstacle((piece,), lattice)


def build_multi(pieces, lattice: BravaisLattice) -> Obstacle:
    """Envelope of several pieces.  Each entry is a QuadraticPiece /
    ConstantPiece or a (Q, d, h) triple (translated over range(Q))."""
    built = []
    for p in pieces:
        if isinstance(p, (QuadraticPiece, ConstantPiece)):
            built.append(p)
        else:
            Q, d, h = p
            built.append(QuadraticPiece(np.asarray(Q, float), np.asarray(d, float), float(h)))
    return Obstacle(tuple(built), lattice)


def constant_obstacle(h: float) -> Obstacle:
    return Obstacle((ConstantPiece(float(h)),))


def sample(obstacle: Obstacle, grid: PeriodicGrid) -> ScalarField:
    """Evaluate the envelope at every grid node."""
    vals = obstacle.evaluate(grid.cartesian_nodes())
    return ScalarField(grid, vals)
