"""Parameter coupling matrix ``G`` from a weight parameterisation, and the loss Hessian."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import DimensionError, as_square, as_vector

MODES = ("identity", "analytic-jacobian", "finite-difference")
PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ParameterMap:
    """``alpha = g(w)`` mapping ``L`` weights to ``K`` basis coefficients.

    ``jacobian`` is required for ``mode="analytic-jacobian"``; ``K`` is required
    for ``mode="identity"``.
    """

    g: Callable[[np.ndarray], np.ndarray] | None = None
    mode: str = "identity"
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    K: int | None = None
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown parameter-map mode {self.mode!r}")
        if self.mode == "analytic-jacobian" and self.jacobian is None:
            raise ValueError("analytic-jacobian mode needs a jacobian callable")
        if self.mode != "identity" and self.g is None:
            raise ValueError(f"{self.mode} mode needs g")

    @classmethod
    def identity(cls, K: int) -> "ParameterMap":
        return cls(g=lambda w: np.asarray(w, dtype=float), mode="identity", K=K)

    def __call__(self, w) -> np.ndarray:
        w = as_vector(w, name="w")
        alpha = as_vector(self.g(w), name="alpha")
        if not np.all(np.isfinite(alpha)):
            raise ValueError(f"parameter map returned non-finite values at w={w}")
        return alpha

    def jacobian_at(self, w) -> np.ndarray:
        """``J[mu, l] = d g^mu / d w_l``, shape ``(K, L)``."""
        w = as_vector(w, name="w")
        if self.mode == "identity":
            return np.eye(w.shape[0])
        if self.mode == "analytic-jacobian":
            return np.atleast_2d(np.asarray(self.jacobian(w), dtype=float))
        return fd_jacobian(self, w, self.fd_step)


def fd_jacobian(g: Callable, w, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``step * (1 + |w_l|)``."""
    w = as_vector(w, name="w")
    cols = []
    for l in range(w.shape[0]):
        h = step * (1.0 + abs(w[l]))
        e = np.zeros_like(w)
        e[l] = h
        cols.append((np.asarray(g(w + e), float) - np.asarray(g(w - e), float)) / (2 * h))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """``G[mu, nu] = d alpha^mu / d alpha^nu`` with unit diagonal."""

    G: np.ndarray
    J: np.ndarray
    pseudo_inverse_tolerance: float = PINV_RTOL
    projector: np.ndarray | None = field(default=None, repr=False)
    warnings: tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return self.G.shape[0]


def coupling_matrix(pmap: ParameterMap, w, rtol: float = PINV_RTOL) -> CouplingMatrix:
    """Build ``G`` at weights ``w``.

    Off-diagonal entries are those of ``J J^+`` (``J^+`` the Moore-Penrose inverse
    with singular values below ``rtol * s_max`` truncated); the diagonal is 1.
    A rank-deficient analytic Jacobian is reported in ``warnings``, not raised.
    """
    w = as_vector(w, name="w")
    if pmap.mode == "identity":
        K = w.shape[0]
        eye = np.eye(K)
        return CouplingMatrix(eye, eye, rtol, eye)
    J = pmap.jacobian_at(w)
    K, L = J.shape
    if L != w.shape[0]:
        raise DimensionError(f"Jacobian has {L} columns for {w.shape[0]} weights")
    P = J @ np.linalg.pinv(J, rcond=rtol)
    notes = []
    rank = np.linalg.matrix_rank(J, tol=rtol * max(np.linalg.norm(J, 2), 1e-300))
    if rank < min(K, L):
        msg = f"Jacobian rank {rank} < min(K, L) = {min(K, L)} at w={w.tolist()}"
        notes.append(msg)
        if pmap.mode == "analytic-jacobian":
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    G = P.copy()
    np.fill_diagonal(G, 1.0)
    return CouplingMatrix(G, J, rtol, P, tuple(notes))


def coupling_second_derivative(pmap: ParameterMap, w, step: float = 1e-5,
                               rtol: float = PINV_RTOL) -> np.ndarray:
    """Finite-difference ``T[mu, eta, zeta] = d^2 alpha^mu / d alpha^eta d alpha^zeta``.

    Uses ``d/d alpha^zeta = sum_l J^+[l, zeta] d/d w_l`` applied to ``G[mu, eta]``.
    """
    w = as_vector(w, name="w")
    J = pmap.jacobian_at(w)
    Jp = np.linalg.pinv(J, rcond=rtol)
    K, L = J.shape
    dG = np.empty((L, K, K))
    for l in range(L):
        h = step * (1.0 + abs(w[l]))
        e = np.zeros(L)
        e[l] = h
        dG[l] = (coupling_matrix(pmap, w + e, rtol).G
                 - coupling_matrix(pmap, w - e, rtol).G) / (2 * h)
    return np.einsum("lz,lme->mez", Jp, dG)


def _g_array(G, K):
    G = getattr(G, "G", G)
    return np.eye(K) if G is None else as_square(G, K, name="G")


def hessian(a2, G=None, delta_alpha=None, g_second=None) -> np.ndarray:
    """Loss Hessian ``H = 2 sum T[mu,eta,zeta] A[mu,nu] dalpha^nu + 2 G^T A G``.

    ``a2`` may be a :class:`~sgdgeom.moments.MomentTensor2` or a plain matrix;
    ``g_second`` (the second-derivative tensor ``T``) defaults to zero, and so
    does ``delta_alpha``. In either case the result is exactly ``2 G^T A G``.
    """
    A = as_square(getattr(a2, "a2", a2), name="A")
    K = A.shape[0]
    Gm = _g_array(G, K)
    H = Gm.T @ A @ Gm
    H = H + H.T  # 2 G^T A G, exactly symmetric for symmetric A
    if g_second is not None and delta_alpha is not None:
        T = np.asarray(g_second, dtype=float)
        if T.shape != (K, K, K):
            raise DimensionError(f"g_second has shape {T.shape}, expected {(K, K, K)}")
        d = as_vector(delta_alpha, K, name="delta_alpha")
        # H[zeta, eta] = 2 sum_{mu,nu} T[mu, eta, zeta] A[mu, nu] d[nu]
        H = H + 2.0 * np.einsum("mez,mn,n->ze", T, A, d)
    elif delta_alpha is not None:
        as_vector(delta_alpha, K, name="delta_alpha")
    return H
