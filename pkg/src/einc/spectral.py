"""Fourier solvers on periodic masks: potentials, polarization fields, and
the inclusion's R-matrix.

For a mask with volume fraction theta, ``solve_poisson`` inverts
lap u = theta - chi (zero-mean), and the Hessian of u has the explicit
Fourier form  H(k) = -chihat(k) khat (x) khat.  ``solve_eshelby`` solves
the linear-elasticity cell problem div L0 (grad v + chi P) = 0 for an
isotropic modulus L0, via the inverse acoustic tensor.  ``compute_R``
assembles the linear map P -> -<grad v>_Omega / (1 - theta); for moduli
whose acoustic tensor has khat as an eigenvector with constant
eigenvalue kappa, R applied to the identity recovers a trace-one PSD
matrix Q = kappa R I characterizing the inclusion shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import MatrixField, PeriodicGrid, ScalarField, reciprocal_basis

__all__ = [
    "DegenerateVolume",
    "SingularAcousticTensor",
    "KappaMismatch",
    "MembershipViolation",
    "CharacteristicFunction",
    "IsoTensor4",
    "GradientField",
    "solve_poisson",
    "solve_eshelby",
    "compute_R",
    "apply_R",
    "bitter_crum",
    "r_matrix_Q",
]


class DegenerateVolume(ValueError):
    """Mask volume fraction is 0 or 1, so the cell problems degenerate."""


class SingularAcousticTensor(ValueError):
    pass


class KappaMismatch(ValueError):
    """Modulus does not have the required acoustic structure for kappa."""


class MembershipViolation(Exception):
    """Computed Q fails symmetry / positivity / unit trace."""


@dataclass(frozen=True)
class CharacteristicFunction:
    grid: PeriodicGrid
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise ValueError("mask shape does not match grid")
        object.__setattr__(self, "mask", mask)

    @property
    def theta(self) -> float:
        return float(np.mean(self.mask))

    def require_proper(self):
        th = self.theta
        if th <= 0.0 or th >= 1.0:
            raise DegenerateVolume(f"volume fraction {th} must lie in (0, 1)")
        return th


@dataclass(frozen=True)
class IsoTensor4:
    """Isotropic modulus (L)_piqj = mu1 d_ij d_pq + mu2 d_pj d_iq + lam d_ip d_jq.

    Well-posedness needs mu1 >= mu2, mu1 + mu2 > 0 and
    lam > -(mu1 + mu2)/n; the acoustic tensor along a unit vector k is
    mu1 I + (mu2 + lam) k (x) k, with eigenvalue kappa = mu1 + mu2 + lam
    on k itself.
    """

    mu1: float
    mu2: float
    lam: float
    n: int

    def __post_init__(self):
        if self.mu1 < self.mu2:
            raise ValueError("need mu1 >= mu2")
        if self.mu1 + self.mu2 <= 0:
            raise ValueError("need mu1 + mu2 > 0")
        if self.lam <= -(self.mu1 + self.mu2) / self.n:
            raise ValueError("need lam > -(mu1 + mu2)/n")

    @property
    def kappa(self) -> float:
        return self.mu1 + self.mu2 + self.lam

    def components(self) -> np.ndarray:
        n = self.n
        I = np.eye(n)
        c = (self.mu1 * np.einsum("ij,pq->piqj", I, I)
             + self.mu2 * np.einsum("pj,iq->piqj", I, I)
             + self.lam * np.einsum("ip,jq->piqj", I, I))
        return c

    def apply(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        return self.mu1 * F + self.mu2 * F.T + self.lam * np.trace(F) * np.eye(self.n)


@dataclass(frozen=True)
class GradientField:
    """Gradient (grad v)_pi of a periodic vector field, one matrix per node."""

    grid: PeriodicGrid
    values: np.ndarray  # (*shape, n, n), [p, i] = d v_p / d x_i
    P: np.ndarray  # the polarization that produced it

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=tuple(range(self.grid.dim)))


def _wave_vectors(grid: PeriodicGrid):
    """Physical wave vectors (..., n) and unit directions (zero at k = 0)."""
    G = reciprocal_basis(grid.lattice)
    freqs = [np.fft.fftfreq(N) * N for N in grid.resolution]
    mesh = np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1)
    k = mesh @ G
    k2 = np.einsum("...i,...i->...", k, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        khat = np.where(k2[..., None] > 0, k / np.sqrt(k2)[..., None], 0.0)
    return k, khat, k2


def solve_poisson(chi: CharacteristicFunction):
    """Zero-mean u with lap u = theta - chi, plus its spectral Hessian.

    Returns (u, H) as a ScalarField and MatrixField.  In Fourier space
    uhat = chihat / |k|^2 and H(k) = -chihat(k) khat (x) khat, so
    Tr H = theta - chi nodewise and the Hessian row/column means vanish.
    """
    theta = chi.require_proper()
    grid = chi.grid
    ntot = grid.num_nodes
    chihat = np.fft.fftn(chi.mask.astype(float)) / ntot
    _, khat, k2 = _wave_vectors(grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        uhat = np.where(k2 > 0, chihat / k2, 0.0)
    u = np.real(np.fft.ifftn(uhat * ntot))
    hhat = -chihat[..., None, None] * np.einsum("...p,...i->...pi", khat, khat)
    H = np.real(np.fft.ifftn(hhat * ntot, axes=tuple(range(grid.dim))))
    return ScalarField(grid, u), MatrixField(grid, H)


def solve_eshelby(chi: CharacteristicFunction, L0: IsoTensor4, P) -> GradientField:
    """Periodic gradient of v solving div[L0 grad v + chi P] = 0.

    Uses the closed-form inverse acoustic tensor
    N(khat) = (I - (mu2+lam)/kappa khat (x) khat) / mu1.
    """
    chi.require_proper()
    grid = chi.grid
    if L0.n != grid.dim:
        raise ValueError("modulus dimension does not match grid")
    if L0.mu1 <= 0 or L0.kappa <= 0:
        raise SingularAcousticTensor("acoustic tensor is not positive definite")
    P = np.asarray(P, dtype=float)
    ntot = grid.num_nodes
    chihat = np.fft.fftn(chi.mask.astype(float)) / ntot
    _, khat, _ = _wave_vectors(grid)
    w = np.einsum("pj,...j->...p", P, khat)  # forcing P khat
    kdotw = np.einsum("...q,...q->...", khat, w)
    s = (w - (L0.mu2 + L0.lam) / L0.kappa * kdotw[..., None] * khat) / L0.mu1
    gvhat = -chihat[..., None, None] * np.einsum("...p,...i->...pi", s, khat)
    values = np.real(np.fft.ifftn(gvhat * ntot, axes=tuple(range(grid.dim))))
    return GradientField(grid, values, P)


def compute_R(chi: CharacteristicFunction, L0: IsoTensor4) -> np.ndarray:
    """Four-index array R[p,i,q,j] with (R P)_pi = -<grad v>_Omega / (1-theta),
    assembled by probing the n^2 unit polarizations."""
    theta = chi.require_proper()
    n = chi.grid.dim
    R = np.zeros((n, n, n, n))
    for q in range(n):
        for j in range(n):
            P = np.zeros((n, n))
            P[q, j] = 1.0
            gv = solve_eshelby(chi, L0, P)
            mean_omega = gv.values[chi.mask].mean(axis=0)
            R[:, :, q, j] = -mean_omega / (1.0 - theta)
    return R


def apply_R(R: np.ndarray, P) -> np.ndarray:
    return np.einsum("piqj,qj->pi", R, np.asarray(P, dtype=float))


def _check_kappa(L0: IsoTensor4, kappa: float):
    if abs(L0.kappa - kappa) > 1e-10 * max(1.0, abs(kappa)):
        raise KappaMismatch(f"modulus has kappa {L0.kappa}, expected {kappa}")


def bitter_crum(chi: CharacteristicFunction, kappa: float, L0: IsoTensor4) -> dict:
    """Energy identity for a dilatational polarization.

    With P = I and a modulus whose acoustic tensor maps khat to
    kappa * khat, the mean energy <grad v . L0 grad v> equals
    theta (1 - theta) / kappa regardless of the mask's shape.
    """
    theta = chi.require_proper()
    _check_kappa(L0, kappa)
    n = chi.grid.dim
    gv = solve_eshelby(chi, L0, np.eye(n))
    Lgv = (L0.mu1 * gv.values + L0.mu2 * np.swapaxes(gv.values, -1, -2)
           + L0.lam * np.trace(gv.values, axis1=-2, axis2=-1)[..., None, None] * np.eye(n))
    energy = float(np.mean(np.einsum("...pi,...pi->...", gv.values, Lgv)))
    predicted = theta * (1.0 - theta) / kappa
    return {"energy": energy, "predicted": predicted,
            "relative_error": abs(energy - predicted) / max(abs(predicted), 1e-300)}


def r_matrix_Q(chi: CharacteristicFunction, kappa: float = 1.0) -> np.ndarray:
    """Shape matrix Q = kappa * (R I) = -<H>_Omega / (1 - theta).

    Q is symmetric positive semi-definite with unit trace; raises
    MembershipViolation otherwise.
    """
    theta = chi.require_proper()
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    _, H = solve_poisson(chi)
    Q = -H.values[chi.mask].mean(axis=0) / (1.0 - theta)
    sym = np.max(np.abs(Q - Q.T))
    tr = float(np.trace(Q))
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))))
    if sym > 1e-8 or abs(tr - 1.0) > 1e-6 or min_eig < -1e-6:
        raise MembershipViolation(
            f"Q fails membership: asymmetry {sym}, trace {tr}, min eig {min_eig}")
    return 0.5 * (Q + Q.T)
