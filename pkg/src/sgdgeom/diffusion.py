"""Gradient-noise diffusion matrices and the diffusion metric.

``empirical_diffusion`` is the sample covariance of per-sample gradients.
``d_infinity`` is its large-sample closed form assembled from the moment
tensors: ``4 sigma^2 G A G + 4 C`` with ``C`` quadratic in ``alpha - alpha_bar``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._validation import DimensionError, as_square, as_vector
from .moments import MomentTensor4


class ConstraintError(ValueError):
    """The metric scale ``epsilon`` is outside ``[0, 1 / lambda_max)``."""

    def __init__(self, epsilon: float, lambda_max: float):
        self.epsilon = epsilon
        self.lambda_max = lambda_max
        super().__init__(
            f"epsilon={epsilon!r} violates epsilon < 1/lambda_max "
            f"(lambda_max={lambda_max!r}, bound={1.0 / lambda_max!r})")


def _a2(a2) -> np.ndarray:
    return as_square(getattr(a2, "a2", a2), name="A")


def _a4(a4, K) -> np.ndarray:
    T = a4.a4 if isinstance(a4, MomentTensor4) else np.asarray(a4, dtype=float)
    if T.shape != (K,) * 4:
        raise DimensionError(f"fourth-moment tensor has shape {T.shape}, expected {(K,) * 4}")
    return T


def _G(G, K) -> np.ndarray:
    G = getattr(G, "G", G)
    return np.eye(K) if G is None else as_square(G, K, name="G")


def _asym(M: np.ndarray) -> float:
    return float(np.linalg.norm(M - M.T))


def empirical_diffusion(per_sample_grads) -> np.ndarray:
    """``D = (1/N) sum g_i g_i^T - mean(g) mean(g)^T`` (centred Gram form)."""
    g = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    if g.ndim != 2:
        raise DimensionError("per-sample gradients must be an (N, K) matrix")
    if g.shape[0] < 2:
        raise ValueError("need N >= 2 gradient rows")
    centred = g - g.mean(axis=0)
    D = centred.T @ centred / g.shape[0]
    return 0.5 * (D + D.T)


def c_infinity(a4, a2, G, delta_alpha, return_asymmetry: bool = False):
    """Parameter-dependent noise part ``C``.

    ``C[mu, nu] = sum G[mu, eta] G[nu, zeta] d_p d_k (A4[p, eta, zeta, k]
    - A[p, eta] A[zeta, k])``, symmetrised. With ``return_asymmetry`` also
    returns the Frobenius norm of ``C - C^T`` before symmetrisation.
    """
    A = _a2(a2)
    K = A.shape[0]
    T = _a4(a4, K)
    Gm = _G(G, K)
    d = as_vector(delta_alpha, K, name="delta_alpha")
    Ad = A @ d
    inner = np.einsum("p,pezk,k->ez", d, T, d) - np.outer(Ad, Ad)
    C = Gm @ inner @ Gm.T
    asym = _asym(C)
    C = 0.5 * (C + C.T)
    return (C, asym) if return_asymmetry else C


def d_infinity(a2, a4, G, delta_alpha, sigma: float, return_asymmetry: bool = False):
    """``D_inf = 4 sigma^2 G A G + 4 C``, symmetrised after assembly."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    A = _a2(a2)
    Gm = _G(G, A.shape[0])
    C, _ = c_infinity(a4, A, Gm, delta_alpha, return_asymmetry=True)
    D = 4.0 * sigma**2 * Gm @ A @ Gm + 4.0 * C
    asym = _asym(D)
    D = 0.5 * (D + D.T)
    return (D, asym) if return_asymmetry else D


def diffusion_metric(D_inf, epsilon: float) -> np.ndarray:
    """``I + epsilon * D_inf``; requires ``0 <= epsilon < 1 / lambda_max(D_inf)``."""
    D = as_square(D_inf, name="D_inf")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    lam = float(np.linalg.eigvalsh(0.5 * (D + D.T)).max())
    if lam > 0 and epsilon * lam >= 1.0:
        raise ConstraintError(epsilon, lam)
    return np.eye(D.shape[0]) + epsilon * D


def default_epsilon(D_inf) -> float:
    """Half the admissible bound, ``0.5 / lambda_max``."""
    lam = float(np.linalg.eigvalsh(as_square(D_inf)).max())
    return 0.5 / lam if lam > 0 else 0.5


def lemma1_quadratic_form(y, G, delta_alpha, a2, Y, F) -> float:
    """Right-hand side of the four-term decomposition of ``y^T C y``.

    ``2 sum_{mu,eta,zeta} V[mu,eta,zeta] V[mu,zeta,eta] Y[zeta,eta]
    + [2 y^T G A G^T y] [2 sum_p d_p^2 F[p,p]]`` with
    ``V[mu, p, eta] = y_mu G[mu, eta] d_p``.
    """
    A = _a2(a2)
    K = A.shape[0]
    yv = as_vector(y, K, name="y")
    Gm = _G(G, K)
    d = as_vector(delta_alpha, K, name="delta_alpha")
    Ym = as_square(getattr(Y, "Y", Y), K, name="Y")
    Fm = as_square(getattr(F, "F", F), K, name="F")
    V = np.einsum("m,me,p->mpe", yv, Gm, d)
    first = 2.0 * np.einsum("mez,mze,ze->", V, V, Ym)
    quad = np.einsum("n,nz,ez,me,m->", yv, Gm, A, Gm, yv)
    second = (2.0 * quad) * (2.0 * float(np.sum(d**2 * np.diag(Fm))))
    return float(first + second)


def independent_feature_ensemble(K: int, N: int, seed: int, means=None,
                                 scales=None) -> np.ndarray:
    """``(N, K)`` matrix of mutually independent Gaussian features."""
    from . import _random

    means = np.zeros(K) if means is None else as_vector(means, K)
    scales = np.ones(K) if scales is None else as_vector(scales, K)
    cols = [_random.gaussian_inputs(N, seed, 0.0, 1.0, tag=100 + k) for k in range(K)]
    return means + scales * np.column_stack(cols)


def lemma1_check(features, ys, delta_alpha, G=None, n_batches: int = 32) -> list[dict]:
    """Compare ``y^T C y`` with the four-term decomposition on a feature sample.

    Both sides are recomputed on ``n_batches`` disjoint batches; the standard
    error of their difference is the batch-means estimate.
    """
    from .moments import estimate_a2, estimate_a4, variance_matrices

    phi = np.asarray(features, dtype=float)
    K = phi.shape[1]
    Gm = _G(G, K)

    def both(block):
        a2 = estimate_a2(None, features=block)
        a4 = estimate_a4(None, features=block)
        var = variance_matrices(None, features=block)
        C = c_infinity(a4, a2, Gm, delta_alpha)
        return [(float(y @ C @ y),
                 lemma1_quadratic_form(y, Gm, delta_alpha, a2, var.Y, var.F)) for y in ys]

    full = both(phi)
    batches = np.array_split(phi, n_batches)
    per_batch = np.array([both(b) for b in batches])  # (B, n_y, 2)
    diffs = per_batch[..., 0] - per_batch[..., 1]
    se = diffs.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return [{"direct": lhs, "decomposition": rhs, "difference": lhs - rhs,
             "std_error": float(s)} for (lhs, rhs), s in zip(full, se)]


@dataclass(frozen=True, eq=False)
class DiffusionState:
    D_empirical: np.ndarray | None
    C_inf: np.ndarray
    D_inf: np.ndarray
    epsilon: float
    D_metric: np.ndarray
    asymmetry_norm: float

    def to_dict(self) -> dict:
        out = {
            "C_inf": self.C_inf.tolist(),
            "D_inf": self.D_inf.tolist(),
            "D_inf_eigenvalues": np.linalg.eigvalsh(self.D_inf).tolist(),
            "epsilon": self.epsilon,
            "D_metric": self.D_metric.tolist(),
            "asymmetry_norm": self.asymmetry_norm,
        }
        if self.D_empirical is not None:
            out["D_empirical"] = self.D_empirical.tolist()
            out["D_empirical_eigenvalues"] = np.linalg.eigvalsh(self.D_empirical).tolist()
        return out

    def dump(self, path, **extra) -> None:
        with open(path, "w") as fh:
            json.dump({**extra, **self.to_dict()}, fh, indent=2)


def diffusion_state(a2, a4, G, delta_alpha, sigma: float, epsilon: float | None = None,
                    per_sample_grads=None) -> DiffusionState:
    """Assemble a :class:`DiffusionState`; ``epsilon`` defaults to ``0.5 / lambda_max``."""
    C, asym_c = c_infinity(a4, a2, G, delta_alpha, return_asymmetry=True)
    D, asym_d = d_infinity(a2, a4, G, delta_alpha, sigma, return_asymmetry=True)
    eps = default_epsilon(D) if epsilon is None else float(epsilon)
    metric = diffusion_metric(D, eps)
    emp = None if per_sample_grads is None else empirical_diffusion(per_sample_grads)
    return DiffusionState(emp, C, D, eps, metric, max(asym_c, asym_d))


def relative_frobenius(a, b) -> float:
    """``||a - b||_F / ||b||_F``."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def identity1_curve(basis, alpha_bar, delta_alpha, sigma: float, sizes, seed: int = 0,
                    G=None, input_dist=(0.0, 1.0)) -> list[dict]:
    """Relative error of the empirical diffusion against ``D_inf`` for nested ``N``.

    ``D_inf`` uses exact Gaussian moments; the datasets for the different sizes
    are prefixes of one stream.
    """
    from .model import generate_dataset, loss_and_gradients
    from .moments import estimate_a2, estimate_a4

    sizes = sorted(int(n) for n in sizes)
    data = generate_dataset(basis, alpha_bar, sizes[-1], sigma, input_dist, seed)
    a2 = estimate_a2(basis, exact=True, input_dist=input_dist)
    a4 = estimate_a4(basis, exact=True, input_dist=input_dist)
    D_inf = d_infinity(a2, a4, G, delta_alpha, sigma)
    alpha = as_vector(alpha_bar) + as_vector(delta_alpha)
    curve = []
    for n in sizes:
        _, grads, _ = loss_and_gradients(data.head(n), basis, G, alpha)
        D = empirical_diffusion(grads)
        curve.append({"N": n, "relative_error": relative_frobenius(D, D_inf),
                      "D_empirical": D.tolist()})
    return curve

