"""Curvature of the diffusion metric ``I + eps * D_inf(alpha)``.

Everything here is first order in ``eps``: the inverse metric is replaced by
the identity, so Christoffel symbols are linear in first derivatives of
``D_inf`` and the Ricci tensor is linear in its second derivatives.

Two independent routes are provided. The ``*_fd`` functions probe the metric
field by central differences. The ``*_closed`` functions evaluate the
moment-tensor closed forms term by term. ``second_derivatives_exact``
differentiates ``D_inf`` analytically (it is quadratic in ``alpha``) and is
used as a cross-check of both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_square, as_vector
from .diffusion import _a4, _G, d_infinity

DEFAULT_STEP = 1e-3


@dataclass(frozen=True, eq=False)
class MetricField:
    """``alpha -> I + eps * D_inf(alpha)`` with frozen moments, ``G`` and ``sigma``."""

    a2: np.ndarray
    a4: np.ndarray
    epsilon: float
    sigma: float = 0.0
    G: np.ndarray | None = None
    alpha_bar: np.ndarray | None = None
    frozen_delta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        A = as_square(getattr(self.a2, "a2", self.a2), name="A")
        K = A.shape[0]
        object.__setattr__(self, "a2", A)
        object.__setattr__(self, "a4", _a4(self.a4, K))
        object.__setattr__(self, "G", _G(self.G, K))
        bar = np.zeros(K) if self.alpha_bar is None else as_vector(self.alpha_bar, K)
        object.__setattr__(self, "alpha_bar", bar)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def K(self) -> int:
        return self.a2.shape[0]

    def d_inf(self, alpha) -> np.ndarray:
        a = as_vector(alpha, self.K, name="alpha")
        delta = self.frozen_delta if self.frozen_delta is not None else a - self.alpha_bar
        D = d_infinity(self.a2, self.a4, self.G, delta, self.sigma)
        if not np.all(np.isfinite(D)):
            raise FloatingPointError(f"non-finite metric at alpha={a.tolist()}")
        return D

    def __call__(self, alpha) -> np.ndarray:
        return np.eye(self.K) + self.epsilon * self.d_inf(alpha)

    def frozen(self, delta_alpha) -> "MetricField":
        """Same field with ``D_inf`` pinned to its value at ``delta_alpha`` (a constant metric)."""
        return MetricField(self.a2, self.a4, self.epsilon, self.sigma, self.G, self.alpha_bar,
                           as_vector(delta_alpha, self.K))


def _step(alpha: np.ndarray, h: float | None) -> float:
    if h is None:
        return DEFAULT_STEP * (1.0 + float(np.linalg.norm(alpha)))
    if h <= 0:
        raise ValueError("h must be > 0")
    return float(h)


def first_derivatives(mf: MetricField, alpha, h: float | None = None) -> np.ndarray:
    """``dD[k, a, b] = d D_inf[a, b] / d alpha^k`` by central differences."""
    a = as_vector(alpha, mf.K, name="alpha")
    h = _step(a, h)
    out = np.empty((mf.K,) * 3)
    for k in range(mf.K):
        e = np.zeros(mf.K)
        e[k] = h
        out[k] = (mf.d_inf(a + e) - mf.d_inf(a - e)) / (2 * h)
    return out


def second_derivatives(mf: MetricField, alpha, h: float | None = None) -> np.ndarray:
    """``d2D[j, k, a, b] = d^2 D_inf[a, b] / d alpha^j d alpha^k`` by central differences."""
    a = as_vector(alpha, mf.K, name="alpha")
    h = _step(a, h)
    K = mf.K
    eye = np.eye(K) * h
    centre = mf.d_inf(a)
    out = np.empty((K,) * 4)
    for j in range(K):
        out[j, j] = (mf.d_inf(a + eye[j]) - 2 * centre + mf.d_inf(a - eye[j])) / h**2
        for k in range(j):
            val = (mf.d_inf(a + eye[j] + eye[k]) - mf.d_inf(a + eye[j] - eye[k])
                   - mf.d_inf(a - eye[j] + eye[k]) + mf.d_inf(a - eye[j] - eye[k])) / (4 * h**2)
            out[j, k] = out[k, j] = val
    return out


def second_derivatives_exact(a2, a4, G=None) -> np.ndarray:
    """Analytic ``d^2 D_inf / d alpha^j d alpha^k`` (constant, since ``D_inf`` is quadratic)."""
    A = as_square(getattr(a2, "a2", a2), name="A")
    K = A.shape[0]
    T = _a4(a4, K)
    Gm = _G(G, K)
    M = T - np.einsum("pe,zk->pezk", A, A)
    # inner[e, z] = sum_pk d_p d_k M[p, e, z, k]; its Hessian in d is M[j,e,z,k] + M[k,e,z,j]
    inner = np.einsum("jezk->jkez", M) + np.einsum("kezj->jkez", M)
    C2 = np.einsum("me,jkez,nz->jkmn", Gm, inner, Gm)
    return 2.0 * (C2 + np.swapaxes(C2, 2, 3))


def christoffel(mf: MetricField, alpha, h: float | None = None) -> np.ndarray:
    """``Gamma[p, i, k] = (eps/2)(dD_pi/dk + dD_pk/di - dD_ki/dp)`` to first order in ``eps``."""
    dD = first_derivatives(mf, alpha, h)
    g = np.einsum("kpi->pik", dD) + np.einsum("ipk->pik", dD) - np.einsum("pki->pik", dD)
    g = 0.5 * mf.epsilon * g
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def _ricci_tensor(d2: np.ndarray, epsilon: float) -> np.ndarray:
    # Ric[i,k] = (eps/2) sum_jp {d_j d_k D_pi + d_i d_j D_kp - d_j d_p D_ki - d_i d_k D_pp}
    t1 = np.einsum("jkpi->ik", d2)
    t2 = np.einsum("ijkp->ik", d2)
    t3 = np.einsum("jpki->ik", d2)
    t4 = d2.shape[0] * np.einsum("ikpp->ik", d2)
    return 0.5 * epsilon * (t1 + t2 - t3 - t4)


def _ricci_scalar(d2: np.ndarray, epsilon: float) -> float:
    # R = (eps/2) sum_ijp {2 d_j d_i D_ip - d_j d_p D_ii - d_i d_i D_pp}
    K = d2.shape[0]
    t1 = 2.0 * np.einsum("jiip->", d2)
    t2 = np.einsum("jpii->", d2)
    t3 = K * np.einsum("iipp->", d2)
    return float(0.5 * epsilon * (t1 - t2 - t3))


def ricci_tensor_fd(mf: MetricField, alpha, h: float | None = None) -> np.ndarray:
    return _ricci_tensor(second_derivatives(mf, alpha, h), mf.epsilon)


def ricci_scalar_fd(mf: MetricField, alpha, h: float | None = None) -> float:
    """Ricci scalar from second differences of the field, contracted as the trace of the
    first-order Ricci tensor."""
    return _ricci_scalar(second_derivatives(mf, alpha, h), mf.epsilon)


def einstein_fd(mf: MetricField, alpha, h: float | None = None) -> np.ndarray:
    """``Ric - R/2 * I`` with both pieces from the same finite-difference stencil."""
    d2 = second_derivatives(mf, alpha, h)
    return _ricci_tensor(d2, mf.epsilon) - 0.5 * _ricci_scalar(d2, mf.epsilon) * np.eye(mf.K)


def ricci_scalar_exact(a2, a4, epsilon: float, G=None) -> float:
    """Ricci scalar from the analytic second derivatives; equals the fd path up to roundoff.

    For ``G = I`` this reduces to
    ``4 eps sum_ijp (A4_iijp - A4_iipp - A_ii A_pj + A_ip^2)``.
    """
    return _ricci_scalar(second_derivatives_exact(a2, a4, G), epsilon)


def _closed_inputs(a2, a4):
    A = as_square(getattr(a2, "a2", a2), name="A")
    return A, _a4(a4, A.shape[0])


def _closed_scalar_sum(A: np.ndarray, T: np.ndarray) -> float:
    K = A.shape[0]
    s = (2 * np.einsum("iipj->", T)
         + np.einsum("pi,ij->", A, A)
         + K * np.einsum("ip,pi->", A, A)
         - np.einsum("piij->", T)
         - K * np.einsum("ippi->", T)
         - 2 * np.einsum("ii,pj->", A, A))
    return float(s)


def ricci_scalar_closed(a2, a4, epsilon: float) -> float:
    """Moment closed form for ``G = I``, term by term::

        2 eps sum_ijp (2 A_iipj + A_pi A_ij + A_ip A_pi - A_piij - A_ippi - 2 A_ii A_pj)

    Free indices absent from a term still count in the triple sum (factor ``K``).
    """
    A, T = _closed_inputs(a2, a4)
    return 2.0 * epsilon * _closed_scalar_sum(A, T)


def ricci_scalar_closed_loops(a2, a4, epsilon: float) -> float:
    """Plain-loop evaluation of :func:`ricci_scalar_closed` (independent check)."""
    A, T = _closed_inputs(a2, a4)
    K = A.shape[0]
    total = 0.0
    for p in range(K):
        for j in range(K):
            for i in range(K):
                total += (2 * T[i, i, p, j] + A[p, i] * A[i, j] + A[i, p] * A[p, i]
                          - T[p, i, i, j] - T[i, p, p, i] - 2 * A[i, i] * A[p, j])
    return 2.0 * epsilon * total


@dataclass(frozen=True, eq=False)
class EinsteinClosed:
    raw: np.ndarray
    symmetrized: np.ndarray
    asymmetry_norm: float


def einstein_tensor_closed(a2, a4, epsilon: float) -> EinsteinClosed:
    """Moment closed form of the Einstein tensor for ``G = I``.

    ``E_ik = 2 eps sum_jp (A_jpik - A_jp A_ik + A_ikpj - A_ik A_ip - A_jkip
    + A_jk A_ip - A_ippk + A_ip A_pk) - (1/2) delta_ik R_closed``.
    The raw tensor is not symmetric in general; the symmetrised tensor and the
    Frobenius norm of ``E - E^T`` are returned alongside it.
    """
    A, T = _closed_inputs(a2, a4)
    K = A.shape[0]
    first = (np.einsum("jpik->ik", T)
             - A.sum() * A
             + np.einsum("ikpj->ik", T)
             - K * A * A.sum(axis=1)[:, None]
             - np.einsum("jkip->ik", T)
             + np.outer(A.sum(axis=1), A.sum(axis=0))
             - K * np.einsum("ippk->ik", T)
             + K * (A @ A))
    E = 2.0 * epsilon * first - 0.5 * np.eye(K) * ricci_scalar_closed(A, T, epsilon)
    asym = float(np.linalg.norm(E - E.T))
    return EinsteinClosed(E, 0.5 * (E + E.T), asym)


@dataclass(frozen=True, eq=False)
class CurvatureReport:
    ricci_fd: float
    ricci_closed: float
    ricci_exact: float
    einstein_fd: np.ndarray
    einstein_closed: np.ndarray
    einstein_asymmetry: float
    fd_step: float
    epsilon: float
    K: int
    agreement: dict

    def to_dict(self) -> dict:
        return {"ricci_fd": self.ricci_fd, "ricci_closed": self.ricci_closed,
                "ricci_exact": self.ricci_exact,
                "einstein_fd": self.einstein_fd.tolist(),
                "einstein_closed": self.einstein_closed.tolist(),
                "einstein_asymmetry": self.einstein_asymmetry,
                "fd_step": self.fd_step, "epsilon": self.epsilon, "K": self.K,
                "agreement": self.agreement}

    def dump(self, path, **extra) -> None:
        with open(path, "w") as fh:
            json.dump({**extra, **self.to_dict()}, fh, indent=2)


def curvature_report(mf: MetricField, alpha, h: float | None = None) -> CurvatureReport:
    """Compare the fd and closed-form routes at one probe point (closed forms assume ``G = I``)."""
    a = as_vector(alpha, mf.K, name="alpha")
    step = _step(a, h)
    d2 = second_derivatives(mf, a, step)
    R_fd = _ricci_scalar(d2, mf.epsilon)
    E_fd = _ricci_tensor(d2, mf.epsilon) - 0.5 * R_fd * np.eye(mf.K)
    R_closed = ricci_scalar_closed(mf.a2, mf.a4, mf.epsilon)
    R_exact = ricci_scalar_exact(mf.a2, mf.a4, mf.epsilon, mf.G)
    Ec = einstein_tensor_closed(mf.a2, mf.a4, mf.epsilon)
    tol = max(1e-4 * abs(R_closed), 1e-6)
    agreement = {
        "fd_minus_closed": R_fd - R_closed,
        "fd_closed_tolerance": tol,
        "fd_matches_closed": bool(abs(R_fd - R_closed) <= tol),
        "fd_minus_exact": R_fd - R_exact,
        "trace_identity_fd": float(np.trace(E_fd) - (1 - mf.K / 2) * R_fd),
        "trace_identity_closed": float(np.trace(Ec.raw) - (1 - mf.K / 2) * R_closed),
    }
    return CurvatureReport(R_fd, R_closed, R_exact, E_fd, Ec.raw, Ec.asymmetry_norm, step,
                           mf.epsilon, mf.K, agreement)
