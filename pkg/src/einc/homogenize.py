"""Effective tensors and optimal bounds for two-phase periodic composites.

Fourth-order moduli act on n x n matrices; ``Tensor4`` stores the
components T[p,i,q,j] and exposes the matrix representation on the
n^2-dimensional space of matrices, which makes composition and inversion
plain linear algebra.

For an isotropic matrix modulus L0 with mu2 + lam = 0 and an inclusion
phase L1 distributed as an E-inclusion with shape matrix Q (symmetric
PSD, unit trace) at volume fraction theta, the effective modulus has the
closed form

    Le = L_th - theta (1-theta) dL (Lt_th + Y(Q))^-1 dL,
    L_th = theta L1 + (1-theta) L0,   Lt_th = theta L0 + (1-theta) L1,
    dL = L0 - L1,   Y(Q)_piqj = -(L0)_piqj + mu1 d_pq (Q^-1)_ij,

with singular Q handled as the limit of Q + eps I.  For general
isotropic L0 (mu2 + lam != 0) the energy F . Le F is known in the
special direction F tied to Q, and the same expression is the optimal
Hashin-Shtrikman-type bound for well-ordered phases; trace bounds on
effective conductivity tensors are provided alongside.  A conjugate
finite-difference cell-problem solver gives an independent numeric
effective form for arbitrary masks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .spectral import CharacteristicFunction, IsoTensor4

__all__ = [
    "LimitDiverged",
    "ConstraintViolated",
    "RangeViolation",
    "OrderingViolation",
    "SingularShift",
    "Tensor4",
    "conductivity_tensor",
    "effective_tensor_closed",
    "effective_form_general",
    "hs_bound",
    "q_from_F",
    "trace_bounds",
    "effective_form_numeric",
    "effective_quadratic_numeric",
    "NotConvergedCG",
]


class LimitDiverged(Exception):
    """Regularized singular-Q limit failed its Cauchy check."""


class ConstraintViolated(ValueError):
    """F does not satisfy the direction constraint tied to Q."""


class RangeViolation(ValueError):
    """Identity matrix is not in the range of dL = L0 - L1."""


class OrderingViolation(ValueError):
    """Phases are not well-ordered for the requested bound direction."""


class SingularShift(ValueError):
    """A shifted tensor (A1 - A2, Ae - A2, ...) is numerically singular."""


class NotConvergedCG(RuntimeError):
    pass


@dataclass(frozen=True)
class Tensor4:
    """Fourth-order tensor acting on n x n matrices, components T[p,i,q,j]."""

    comp: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.comp, dtype=float)
        if c.ndim != 4 or len(set(c.shape)) != 1:
            raise ValueError("components must have shape (n, n, n, n)")
        object.__setattr__(self, "comp", c)

    @property
    def n(self) -> int:
        return self.comp.shape[0]

    @classmethod
    def from_iso(cls, L: IsoTensor4) -> "Tensor4":
        return cls(L.components())

    @classmethod
    def identity(cls, n: int) -> "Tensor4":
        I = np.eye(n)
        return cls(np.einsum("pq,ij->piqj", I, I))

    def as_matrix(self) -> np.ndarray:
        n = self.n
        return self.comp.reshape(n * n, n * n)

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Tensor4":
        n = int(round(np.sqrt(M.shape[0])))
        return cls(np.asarray(M, dtype=float).reshape(n, n, n, n))

    def apply(self, F) -> np.ndarray:
        return np.einsum("piqj,qj->pi", self.comp, np.asarray(F, dtype=float))

    def form(self, F) -> float:
        F = np.asarray(F, dtype=float)
        return float(np.einsum("pi,piqj,qj->", F, self.comp, F))

    def compose(self, other: "Tensor4") -> "Tensor4":
        return Tensor4.from_matrix(self.as_matrix() @ other.as_matrix())

    def inv(self) -> "Tensor4":
        M = self.as_matrix()
        if np.linalg.cond(M) > 1e13:
            raise SingularShift("tensor is numerically singular")
        return Tensor4.from_matrix(np.linalg.inv(M))

    def solve(self, F) -> np.ndarray:
        """X with T X = F, via least squares; raises RangeViolation if F
        is outside the range of T."""
        F = np.asarray(F, dtype=float)
        n = self.n
        X, *_ = np.linalg.lstsq(self.as_matrix(), F.reshape(n * n), rcond=None)
        resid = np.linalg.norm(self.as_matrix() @ X - F.reshape(n * n))
        if resid > 1e-10 * max(1.0, np.linalg.norm(F)):
            raise RangeViolation("right-hand side is not in the tensor's range")
        return X.reshape(n, n)

    def __add__(self, other):
        return Tensor4(self.comp + other.comp)

    def __sub__(self, other):
        return Tensor4(self.comp - other.comp)

    def __mul__(self, s: float):
        return Tensor4(self.comp * float(s))

    __rmul__ = __mul__

    def sym_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the quadratic form restricted to symmetric matrices."""
        n = self.n
        basis = []
        for i in range(n):
            E = np.zeros((n, n))
            E[i, i] = 1.0
            basis.append(E)
        for i in range(n):
            for j in range(i + 1, n):
                E = np.zeros((n, n))
                E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
                basis.append(E)
        B = np.stack([E.reshape(n * n) for E in basis], axis=1)
        S = B.T @ self.as_matrix() @ B
        return np.linalg.eigvalsh(0.5 * (S + S.T))


def conductivity_tensor(A) -> Tensor4:
    """Vector modulus (L)_piqj = d_pq A_ij built from a conductivity matrix."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return Tensor4(np.einsum("pq,ij->piqj", np.eye(n), A))


def _as_tensor(L, n: int) -> Tensor4:
    if isinstance(L, IsoTensor4):
        return Tensor4.from_iso(L)
    if isinstance(L, Tensor4):
        return L
    return Tensor4(np.asarray(L, dtype=float).reshape(n, n, n, n))


def _closed_form(L1: Tensor4, L0: IsoTensor4, Qinv: np.ndarray, theta: float) -> Tensor4:
    n = L0.n
    L0t = Tensor4.from_iso(L0)
    L_th = theta * L1 + (1.0 - theta) * L0t
    Lt_th = theta * L0t + (1.0 - theta) * L1
    dL = L0t - L1
    Y = Tensor4(-L0t.comp + L0.mu1 * np.einsum("pq,ij->piqj", np.eye(n), Qinv))
    core = (Lt_th + Y).inv()
    corr = dL.compose(core).compose(dL)
    return L_th - theta * (1.0 - theta) * corr


def effective_tensor_closed(L1, L0: IsoTensor4, Q, theta: float,
                            eps_seq=(1e-4, 1e-5, 1e-6)) -> Tensor4:
    """Closed-form effective modulus for an E-inclusion microstructure.

    Requires mu2 + lam = 0 for the matrix modulus.  Singular shape
    matrices are handled by evaluating at Q + eps I for a decreasing
    eps sequence and extrapolating linearly; a failed Cauchy check
    raises LimitDiverged.
    """
    if abs(L0.mu2 + L0.lam) > 1e-12 * max(1.0, abs(L0.mu1)):
        raise ValueError("closed form requires mu2 + lam = 0 for the matrix phase")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    Q = np.asarray(Q, dtype=float)
    n = L0.n
    eigs = np.linalg.eigvalsh(Q)
    if np.min(eigs) < -1e-8 or abs(np.trace(Q) - 1.0) > 1e-8:
        raise ValueError("Q must be symmetric PSD with unit trace")
    L1t = _as_tensor(L1, n)
    if np.min(eigs) > 1e-8:
        return _closed_form(L1t, L0, np.linalg.inv(Q), theta)

    vals = []
    for eps in eps_seq:
        Qe = Q + eps * np.eye(n)
        vals.append(_closed_form(L1t, L0, np.linalg.inv(Qe), theta).comp)
    scale = max(1.0, float(np.max(np.abs(vals[-1]))))
    if np.max(np.abs(vals[-1] - vals[-2])) > 1e-5 * scale:
        raise LimitDiverged("regularized effective tensors are not Cauchy in eps")
    e1, e2 = eps_seq[-2], eps_seq[-1]
    extrap = (e1 * vals[-1] - e2 * vals[-2]) / (e1 - e2)
    return Tensor4(extrap)


def _delta_data(L1, L0: IsoTensor4):
    n = L0.n
    dL = Tensor4.from_iso(L0) - _as_tensor(L1, n)
    X = dL.solve(np.eye(n))  # dL^-1 I
    return dL, X


def effective_form_general(L1, L0: IsoTensor4, Q, theta: float, F) -> float:
    """Energy F . Le F for general isotropic L0 (mu2 + lam != 0).

    Valid only along the direction F tied to the shape matrix Q by
    dL F / Tr F = [(1-theta) dL Q - kappa I] / [(1-theta) - kappa Tr(dL^-1 I)];
    raises ConstraintViolated otherwise.
    """
    if abs(L0.mu2 + L0.lam) <= 1e-12 * max(1.0, abs(L0.mu1)):
        raise ValueError("use effective_tensor_closed when mu2 + lam = 0")
    F = np.asarray(F, dtype=float)
    trF = float(np.trace(F))
    if abs(trF) < 1e-14:
        raise ConstraintViolated("F must have nonzero trace")
    kappa = L0.kappa
    dL, X = _delta_data(L1, L0)
    D = (1.0 - theta) - kappa * float(np.trace(X))
    rhs = ((1.0 - theta) * dL.apply(np.asarray(Q, float)) - kappa * np.eye(L0.n)) / D
    lhs = dL.apply(F) / trF
    if np.linalg.norm(lhs - rhs) > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise ConstraintViolated("F does not satisfy the Q-direction constraint")
    return Tensor4.from_iso(L0).form(F) + theta * kappa / D * trF**2


def hs_bound(L1, L0: IsoTensor4, theta: float, F, direction: str = "lower") -> float:
    """Optimal bound on F . Le F - F . L0 F for well-ordered phases.

    ``direction='lower'`` requires L1 >= L0 (and bounds from below),
    ``'upper'`` the reverse.  The bound theta kappa / D (Tr F)^2 with
    D = (1-theta) - kappa Tr(dL^-1 I) is attained by E-inclusion
    microstructures with the matching shape matrix.
    """
    if direction not in ("lower", "upper"):
        raise ValueError("direction must be 'lower' or 'upper'")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    n = L0.n
    diff = _as_tensor(L1, n) - Tensor4.from_iso(L0)  # L1 - L0
    eigs = diff.sym_eigenvalues()
    scale = max(1.0, float(np.max(np.abs(eigs))))
    if direction == "lower" and np.min(eigs) < -1e-10 * scale:
        raise OrderingViolation("lower bound requires L1 >= L0 on symmetric matrices")
    if direction == "upper" and np.max(eigs) > 1e-10 * scale:
        raise OrderingViolation("upper bound requires L1 <= L0 on symmetric matrices")
    F = np.asarray(F, dtype=float)
    kappa = L0.kappa
    _, X = _delta_data(L1, L0)
    D = (1.0 - theta) - kappa * float(np.trace(X))
    return theta * kappa / D * float(np.trace(F)) ** 2


def q_from_F(F, L0: IsoTensor4, L1, theta: float) -> np.ndarray:
    """Shape matrix whose E-inclusion attains the bound in direction F:

        Q = F/TrF [1 - kappa/(1-theta) Tr(dL^-1 I)] + kappa/(1-theta) dL^-1 I.
    """
    F = np.asarray(F, dtype=float)
    trF = float(np.trace(F))
    if abs(trF) < 1e-14:
        raise ValueError("F must have nonzero trace")
    kappa = L0.kappa
    _, X = _delta_data(L1, L0)
    c = kappa / (1.0 - theta)
    return F / trF * (1.0 - c * float(np.trace(X))) + c * X


def _checked_inv(A: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.cond(A) > 1e13:
        raise SingularShift(f"{what} is numerically singular")
    return np.linalg.inv(A)


def trace_bounds(A1, A2, Ae, theta: float) -> dict:
    """Trace bounds on an effective conductivity with A1 > A2:

        Tr(A2 (Ae - A2)^-1) <= Tr(A2 (A1 - A2)^-1)/theta + (1-theta)/theta
        Tr(A1 (A1 - Ae)^-1) <= Tr(A1 (A1 - A2)^-1)/(1-theta) - theta/(1-theta)
    """
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    Ae = np.asarray(Ae, dtype=float)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if np.max(np.linalg.eigvalsh(A2 - A1)) >= 0:
        raise OrderingViolation("bounds require A2 - A1 negative definite")
    d12 = _checked_inv(A1 - A2, "A1 - A2")
    lhs1 = float(np.trace(A2 @ _checked_inv(Ae - A2, "Ae - A2")))
    rhs1 = float(np.trace(A2 @ d12)) / theta + (1.0 - theta) / theta
    lhs2 = float(np.trace(A1 @ _checked_inv(A1 - Ae, "A1 - Ae")))
    rhs2 = float(np.trace(A1 @ d12)) / (1.0 - theta) - theta / (1.0 - theta)
    tol = 1e-9
    return {
        "bound1": (lhs1, rhs1),
        "bound2": (lhs2, rhs2),
        "satisfied": lhs1 <= rhs1 + tol * max(1.0, abs(rhs1))
        and lhs2 <= rhs2 + tol * max(1.0, abs(rhs2)),
    }


# ---------------------------------------------------------------------------
# numeric cell problem

def _material_arrays(chi: CharacteristicFunction, L1, L0, n: int):
    c1 = _as_tensor(L1, n).comp
    c0 = _as_tensor(L0, n).comp if not isinstance(L0, IsoTensor4) else L0.components()
    return c1, c0


def effective_form_numeric(chi: CharacteristicFunction, L1, L0, F,
                           tol: float = 1e-10, max_iter: int = 50_000) -> float:
    """Numeric energy F . Le F from the periodic cell problem.

    Minimizes <(grad v + F) . L(x) (grad v + F)> over periodic vector
    fields v with a forward-difference gradient, solved by Jacobi-
    preconditioned conjugate gradients to relative residual ``tol``.
    """
    grid = chi.grid
    n = grid.dim
    shape = grid.shape
    h = grid.axis_spacings()
    c1, c0 = _material_arrays(chi, L1, L0, n)
    m = chi.mask.astype(float)
    F = np.asarray(F, dtype=float)

    def flux(G):
        # G: (*shape, n, n) strain, returns L(x) G nodewise
        s1 = np.einsum("piqj,...qj->...pi", c1, G)
        s0 = np.einsum("piqj,...qj->...pi", c0, G)
        return m[..., None, None] * s1 + (1.0 - m)[..., None, None] * s0

    def grad(v):
        G = np.empty(shape + (n, n))
        for i in range(n):
            for p in range(n):
                G[..., p, i] = (np.roll(v[..., p], -1, axis=i) - v[..., p]) / h[i]
        return G

    def divergence(S):
        out = np.zeros(shape + (n,))
        for i in range(n):
            for p in range(n):
                out[..., p] += (S[..., p, i] - np.roll(S[..., p, i], 1, axis=i)) / h[i]
        return out

    def matvec(x):
        v = x.reshape(shape + (n,))
        return -divergence(flux(grad(v))).ravel()

    b = divergence(flux(np.broadcast_to(F, shape + (n, n)))).ravel()

    # Jacobi diagonal: sum_i (L[p,i,p,i](x) + L[p,i,p,i](x - e_i)) / h_i^2
    diag = np.zeros(shape + (n,))
    for p in range(n):
        for i in range(n):
            ld = m * c1[p, i, p, i] + (1.0 - m) * c0[p, i, p, i]
            diag[..., p] += (ld + np.roll(ld, 1, axis=i)) / h[i] ** 2
    dflat = diag.ravel()

    size = int(np.prod(shape)) * n
    A = LinearOperator((size, size), matvec=matvec)
    M = LinearOperator((size, size), matvec=lambda x: x / dflat)
    x, info = cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    if info != 0:
        raise NotConvergedCG(f"cell-problem CG failed to converge (info={info})")
    v = x.reshape(shape + (n,))
    G = grad(v) + F
    S = flux(G)
    return float(np.mean(np.einsum("...pi,...pi->...", G, S)))


def effective_quadratic_numeric(chi: CharacteristicFunction, L1, L0,
                                tol: float = 1e-10) -> np.ndarray:
    """Quadratic form of Le on symmetric matrices, probed numerically.

    Returns the symmetric matrix of the form in the orthonormal basis of
    symmetric matrices (diagonal units, then sqrt(2)-scaled off-diagonal
    pairs), assembled from energies of basis probes and their sums.
    """
    n = chi.grid.dim
    basis = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    mdim = len(basis)
    energies = [effective_form_numeric(chi, L1, L0, E, tol=tol) for E in basis]
    Qform = np.zeros((mdim, mdim))
    for a in range(mdim):
        Qform[a, a] = energies[a]
    for a in range(mdim):
        for b_ in range(a + 1, mdim):
            eab = effective_form_numeric(chi, L1, L0, basis[a] + basis[b_], tol=tol)
            Qform[a, b_] = Qform[b_, a] = 0.5 * (eab - energies[a] - energies[b_])
    return Qform


def quadratic_on_sym(T: Tensor4) -> np.ndarray:
    """Matrix of F . T F on the same symmetric basis as the numeric probe."""
    n = T.n
    basis = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    mdim = len(basis)
    out = np.zeros((mdim, mdim))
    for a in range(mdim):
        Ta = T.apply(basis[a])
        for b in range(mdim):
            out[a, b] = float(np.sum(Ta * basis[b]))
    return 0.5 * (out + out.T)
