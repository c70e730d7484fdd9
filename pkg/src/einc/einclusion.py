"""Coincident-set extraction, component labeling, and E-inclusion checks.

The coincident (contact) set of an obstacle-problem solution is the set
of nodes where u touches the obstacle.  On a solution built from
quadratic pieces Q_1..Q_N, interior contact nodes carry the constant
Hessian of the piece they touch; labeling assigns each component by
nearest piece Hessian in Frobenius norm.  A valid construction ties the
load to the volume fractions through

    f * theta_0 + sum_i Tr(Q_i) * theta_i = 0,

and admissible fraction/matrix data must satisfy the matrix inequality
checked by ``check_necessary_condition``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .lattice import ScalarField, hessian, laplacian_apply
from .solver import VISolution, _erode

__all__ = [
    "UnmatchedRegion",
    "EInclusionLabeling",
    "extract_coincident",
    "label_components",
    "predicted_theta",
    "check_necessary_condition",
    "verify_einclusion",
    "connected_components",
    "center_mask",
    "mask_perimeter_2d",
    "isoperimetric_ratio",
    "euler_characteristic_3d",
]


class UnmatchedRegion(Exception):
    """Too many interior contact nodes match none of the candidate Hessians."""


@dataclass
class EInclusionLabeling:
    masks: list  # per-matrix boolean node masks Omega_1..Omega_N
    K: list  # the candidate matrices Q_1..Q_N
    thetas: np.ndarray  # volume fractions of Omega_1..Omega_N
    theta0: float  # complement fraction
    f: float
    unassigned: int = 0
    mask: np.ndarray | None = None  # the full coincident mask that was labeled

    @property
    def traces(self) -> np.ndarray:
        return np.array([np.trace(Q) for Q in self.K])

    def volume_identity_residual(self) -> float:
        """|f theta_0 + sum_i Tr(Q_i) theta_i|."""
        return float(abs(self.f * self.theta0 + np.dot(self.traces, self.thetas)))


def extract_coincident(sol: VISolution, a: float = 1.0) -> np.ndarray:
    """Nodes where |u - phi| < a * 1e-3 * max(1, max|phi|)."""
    phi = sol.obstacle_field.values
    scale = max(1.0, float(np.max(np.abs(phi))))
    mask = (sol.u.values - phi) < a * 1e-3 * scale
    if sol.free_mask is not None:
        mask &= sol.free_mask
    return mask


def label_components(sol: VISolution, mask: np.ndarray, K, tol_q: float | None = None,
                     max_unmatched: float = 0.01) -> EInclusionLabeling:
    """Assign contact nodes to the candidate matrices K = [Q_1..Q_N].

    Interior nodes (all face neighbors inside the mask) are matched to
    the Frobenius-nearest Q_i, within ``tol_q`` (default 5% of the
    largest ||Q_i||_F); the one-cell boundary band inherits the label of
    the nearest labeled interior node.  Raises UnmatchedRegion when more
    than ``max_unmatched`` of the interior nodes match nothing.
    """
    K = [np.asarray(Q, dtype=float) for Q in K]
    norms = [np.linalg.norm(Q) for Q in K]
    if tol_q is None:
        tol_q = 0.05 * max(norms)
    grid = sol.u.grid
    n = grid.dim
    H = hessian(sol.u).values

    interior = _erode(mask, n)
    labels = np.full(grid.shape, -1, dtype=np.int32)
    unassigned = 0
    if interior.any():
        Hi = H[interior]
        dists = np.stack([np.linalg.norm(Hi - Q, axis=(-2, -1)) for Q in K], axis=-1)
        best = np.argmin(dists, axis=-1)
        ok = dists[np.arange(len(best)), best] <= tol_q
        assigned = np.where(ok, best.astype(np.int32), -2)
        labels[interior] = assigned
        unassigned = int(np.sum(~ok))
        if unassigned > max_unmatched * max(1, int(interior.sum())):
            raise UnmatchedRegion(
                f"{unassigned} of {int(interior.sum())} interior contact nodes match no candidate Hessian")
    elif mask.any():
        raise UnmatchedRegion("contact set has no interior nodes to label")

    # boundary band: breadth-first from the labeled interior over the mask
    frontier = interior.copy()
    todo = mask & ~interior
    while todo.any():
        progressed = False
        for a_ in range(n):
            for s in (1, -1):
                src = np.roll(labels, s, axis=a_)
                take = todo & (labels < 0) & (src >= 0)
                if take.any():
                    labels[take] = src[take]
                    todo &= labels < 0
                    progressed = True
        if not progressed:
            # isolated sliver with no labeled interior nearby
            labels[todo] = -2
            unassigned += int(todo.sum())
            break

    total = grid.num_nodes if sol.free_mask is None else int(sol.free_mask.sum())
    masks = [labels == i for i in range(len(K))]
    thetas = np.array([float(m.sum()) / total for m in masks])
    theta0 = 1.0 - float(mask.sum()) / total
    return EInclusionLabeling(masks, K, thetas, theta0, sol.f, unassigned, mask)


def predicted_theta(Q, f: float) -> float:
    """Volume fraction f / (f - Tr Q) of a single-matrix construction."""
    tr = float(np.trace(np.asarray(Q, dtype=float)))
    if tr >= 0:
        raise ValueError("Tr Q must be negative")
    if f <= 0:
        raise ValueError("load must be positive")
    return f / (f - tr)


def check_necessary_condition(K, thetas) -> dict:
    """Admissibility of fraction/matrix data (Q_i, theta_i).

    Evaluates the matrix

        M = sum_i [theta0 Tr Q_i + sum_j theta_j Tr Q_j] theta_i Q_i
            - theta0 sum_i theta_i Q_i^2 - (sum_i theta_i Q_i)^2

    which must be positive semi-definite for any attainable E-inclusion
    family.  Returns the minimum eigenvalue and a pass flag
    (min_eig >= -1e-10 after normalizing by ||M||).
    """
    K = [np.asarray(Q, dtype=float) for Q in K]
    thetas = np.asarray(thetas, dtype=float)
    if len(K) != len(thetas):
        raise ValueError("need one fraction per matrix")
    theta0 = 1.0 - float(np.sum(thetas))
    tr_sum = float(sum(th * np.trace(Q) for Q, th in zip(K, thetas)))
    n = K[0].shape[0]
    M = np.zeros((n, n))
    S = np.zeros((n, n))
    for Q, th in zip(K, thetas):
        M += (theta0 * np.trace(Q) + tr_sum) * th * Q
        M -= theta0 * th * (Q @ Q)
        S += th * Q
    M -= S @ S
    scale = max(1.0, float(np.linalg.norm(M)))
    min_eig = float(np.min(np.linalg.eigvalsh(M)))
    return {"M": M, "min_eig": min_eig, "satisfied": min_eig >= -1e-10 * scale}


def verify_einclusion(sol: VISolution, labeling: EInclusionLabeling) -> dict:
    """Pointwise identity checks on a labeled solution.

    Reports, per component, the worst interior deviation of the Hessian
    from its Q_i (and its spread), the worst interior deviation of the
    Laplacian from f on the complement, and the volume identity
    residual |f theta_0 + sum Tr(Q_i) theta_i|.
    """
    grid = sol.u.grid
    n = grid.dim
    H = hessian(sol.u).values
    lap = laplacian_apply(sol.u).values
    free = sol.free_mask if sol.free_mask is not None else np.ones(grid.shape, bool)

    per_component = []
    union = np.zeros(grid.shape, bool)
    for Q, m in zip(labeling.K, labeling.masks):
        union |= m
        inner = _erode(m, n)
        if inner.any():
            dev = np.linalg.norm(H[inner] - Q, axis=(-2, -1))
            per_component.append({
                "max_hessian_deviation": float(np.max(dev)),
                "hessian_spread": float(np.std(dev)),
                "interior_nodes": int(inner.sum()),
            })
        else:
            per_component.append({
                "max_hessian_deviation": float("nan"),
                "hessian_spread": float("nan"),
                "interior_nodes": 0,
            })

    if labeling.mask is not None:
        union |= labeling.mask
    outside = _erode(free & ~union, n) & free
    max_lap = float(np.max(np.abs(lap[outside] - sol.f))) if outside.any() else 0.0
    residual = labeling.volume_identity_residual()
    min_res = min(grid.resolution)
    nec = check_necessary_condition(labeling.K, labeling.thetas)
    return {
        "components": per_component,
        "max_laplacian_deviation": max_lap,
        "volume_identity_residual": residual,
        "volume_identity_ok": residual <= 3.0 / min_res * max(1.0, abs(sol.f)),
        "necessary_condition": {k: v for k, v in nec.items() if k != "M"},
        "unassigned": labeling.unassigned,
    }


# ---------------------------------------------------------------------------
# mask geometry helpers

def connected_components(mask: np.ndarray, periodic: bool = True):
    """Face-connected components; returns (labels, count) with labels >= 1."""
    labels, count = ndimage.label(mask)
    if not periodic or count == 0:
        return labels, count
    # merge labels that touch across each periodic seam
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(mask.ndim):
        lo = np.take(labels, 0, axis=a).ravel()
        hi = np.take(labels, -1, axis=a).ravel()
        for x, y in zip(lo, hi):
            if x and y:
                rx, ry = find(x), find(y)
                if rx != ry:
                    parent[ry] = rx
    remap = {}
    out = np.zeros_like(labels)
    nxt = 0
    roots = [find(i) for i in range(count + 1)]
    for i in range(1, count + 1):
        r = roots[i]
        if r not in remap:
            nxt += 1
            remap[r] = nxt
    for i in range(1, count + 1):
        out[labels == i] = remap[roots[i]]
    return out, nxt


def center_mask(mask: np.ndarray) -> np.ndarray:
    """Roll a periodic mask so its circular centroid sits at the array center."""
    out = mask
    for a, N in enumerate(mask.shape):
        m = np.arange(N) * (2.0 * np.pi / N)
        axes = tuple(i for i in range(mask.ndim) if i != a)
        weights = mask.sum(axis=axes).astype(float)
        if weights.sum() == 0:
            continue
        ang = np.angle(np.sum(weights * np.exp(1j * m)))
        center = (ang / (2.0 * np.pi)) * N
        shift = int(round(N / 2 - center))
        out = np.roll(out, shift, axis=a)
    return out


_MS_EDGES = {  # marching squares on a binary 2x2 block, crossings at edge midpoints
    # corners ordered (i,j), (i+1,j), (i,j+1), (i+1,j+1); each case lists
    # segments as pairs of edge midpoints in local (di, dj) coordinates.
    1: [((0.5, 0.0), (0.0, 0.5))],
    2: [((0.5, 0.0), (1.0, 0.5))],
    3: [((0.0, 0.5), (1.0, 0.5))],
    4: [((0.0, 0.5), (0.5, 1.0))],
    5: [((0.5, 0.0), (0.5, 1.0))],
    6: [((0.5, 0.0), (0.0, 0.5)), ((1.0, 0.5), (0.5, 1.0))],
    7: [((1.0, 0.5), (0.5, 1.0))],
}


def mask_perimeter_2d(mask: np.ndarray, spacings) -> float:
    """Contour length of a (non-wrapping) 2D mask by marching squares."""
    h0, h1 = spacings
    total = 0.0
    m = mask.astype(np.int8)
    c00 = m[:-1, :-1]
    c10 = m[1:, :-1]
    c01 = m[:-1, 1:]
    c11 = m[1:, 1:]
    case = c00 + 2 * c10 + 4 * c01 + 8 * c11
    case = np.where(case > 7, 15 - case, case)  # complement symmetry
    for code, segs in _MS_EDGES.items():
        cnt = int(np.sum(case == code))
        if not cnt:
            continue
        length = sum(np.hypot((b[0] - a[0]) * h0, (b[1] - a[1]) * h1) for a, b in segs)
        total += cnt * length
    return total


def isoperimetric_ratio(mask: np.ndarray, spacings) -> float:
    """4*pi*A / P^2 of a centered 2D mask (1 for a disk, pi/4 for a square)."""
    area = float(mask.sum()) * spacings[0] * spacings[1]
    perim = mask_perimeter_2d(center_mask(mask), spacings)
    return 4.0 * np.pi * area / perim**2


def euler_characteristic_3d(mask: np.ndarray) -> int:
    """Euler characteristic of the cubical complex of a (centered) voxel mask."""
    m = np.pad(center_mask(mask), 1).astype(bool)
    cells = int(m.sum())
    faces = 0
    edges = 0
    for a in range(3):
        faces += int(np.sum(m | np.roll(m, 1, axis=a)))
        b, c = [x for x in range(3) if x != a]
        e = m | np.roll(m, 1, axis=b) | np.roll(m, 1, axis=c) \
            | np.roll(np.roll(m, 1, axis=b), 1, axis=c)
        edges += int(np.sum(e))
    verts = m.copy()
    for a in range(3):
        verts = verts | np.roll(verts, 1, axis=a)
    vertices = int(np.sum(verts))
    return vertices - edges + faces - cells
