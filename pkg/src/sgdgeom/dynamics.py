"""Parameter dynamics: SGD, the geodesic flow, its closed form, stability, and
the stationary-variance experiment.

Time conventions: an SGD step of learning rate ``eta`` advances time by ``eta``,
so SGD trajectories and the continuous flow share one clock.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _random
from ._validation import DimensionError, as_inputs, as_square, as_vector
from .basis import BasisSet, parse_basis
from .coupling import ParameterMap, coupling_matrix
from .model import Dataset, generate_dataset

DIVERGENCE_LIMIT = 1e6
RATE_CONVENTIONS = {"paper": 1.0, "paper-literal": 1.0, "flow": 2.0, "flow-consistent": 2.0}


class DivergenceError(RuntimeError):
    """Parameters left the ``|alpha| <= 1e6`` box; ``trajectory`` holds the run so far."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class StepSizeError(RuntimeError):
    """The integrator state norm more than doubled in one step."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    losses: np.ndarray | None = None
    method: str = "sgd"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        if s.shape[0] != t.shape[0]:
            raise DimensionError(f"{s.shape[0]} states for {t.shape[0]} times")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def K(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def window(self, start: float | None = None, stop: float | None = None) -> "Trajectory":
        """Sub-trajectory with ``start <= t <= stop``."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.times >= start
        if stop is not None:
            mask &= self.times <= stop
        losses = None if self.losses is None else self.losses[mask]
        return Trajectory(self.times[mask], self.states[mask], losses, self.method,
                          dict(self.config))

    def to_csv(self, path_or_buf) -> None:
        """Columns ``t, alpha_1..alpha_K, loss`` to a path or an open text stream."""
        if hasattr(path_or_buf, "write"):
            self._write_csv(path_or_buf)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"alpha_{k + 1}" for k in range(self.K)] + ["loss"])
        losses = self.losses if self.losses is not None else [math.nan] * len(self)
        for t, row, loss in zip(self.times, self.states, losses):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(loss))])


# -- SGD ----------------------------------------------------------------------

def _quadratic_loss(phi: np.ndarray, y: np.ndarray):
    """Return ``alpha -> mean((y - phi alpha)^2)`` for many alphas at once.

    Uses ``f_min + d^T S d`` around the least-squares solution so no large
    terms cancel.
    """
    n = phi.shape[0]
    S = phi.T @ phi / n
    a_ls, *_ = np.linalg.lstsq(phi, y, rcond=None)
    f_min = float(np.mean((y - phi @ a_ls) ** 2))

    def loss(states):
        d = np.atleast_2d(states) - a_ls
        return f_min + np.einsum("tk,kl,tl->t", d, S, d)

    return loss


def sgd_simulate(dataset: Dataset, basis: BasisSet, pmap: ParameterMap | None, alpha0,
                 eta: float, batch: int, epochs: int, seed: int = 0, w0=None,
                 record_every: int = 1, coupling_refresh: int = 1) -> Trajectory:
    """Mini-batch SGD on the mean squared error.

    Each step draws ``batch`` distinct sample indices uniformly and applies
    ``alpha <- alpha - eta * grad``; ``epochs`` counts steps. With a
    non-identity ``pmap`` the gradient is taken through ``G`` (refreshed every
    ``coupling_refresh`` steps) and the weights ``w`` follow ``alpha`` through
    the pseudo-inverse of the Jacobian.

    Raises
    ------
    DivergenceError
        If any ``|alpha^mu|`` exceeds 1e6; the partial trajectory is attached.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    N = dataset.N
    if not 1 <= batch <= N:
        raise ValueError(f"batch must satisfy 1 <= batch <= N={N}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    phi = basis.features(dataset.x)
    y = dataset.y_hat
    alpha = as_vector(alpha0, basis.K, name="alpha0").copy()

    identity = pmap is None or pmap.mode == "identity"
    if not identity:
        if w0 is None:
            raise ValueError("a non-identity parameter map needs initial weights w0")
        w = as_vector(w0).copy()
        cm = coupling_matrix(pmap, w)
        G, Jp = cm.G, np.linalg.pinv(cm.J)

    rng = _random.stream(seed, 7)
    n_rec = epochs // record_every + 1
    states = np.empty((n_rec, basis.K))
    states[0] = alpha
    rec = 1
    block = 4096
    full_batch = batch == N
    scale = 2.0 * eta / batch

    for start in range(0, epochs, block):
        steps = min(block, epochs - start)
        if batch == 1:
            picks = rng.integers(0, N, size=(steps, 1))
        for s in range(steps):
            if full_batch:
                idx = slice(None)
            elif batch == 1:
                idx = picks[s]
            else:
                idx = rng.choice(N, size=batch, replace=False, shuffle=False)
            pb = phi[idx]
            r = y[idx] - pb @ alpha
            step = scale * (pb.T @ r)
            if not identity:
                step = G.T @ step
                new = alpha + step
                w = w + Jp @ step
                k = start + s + 1
                if k % coupling_refresh == 0:
                    cm = coupling_matrix(pmap, w)
                    G, Jp = cm.G, np.linalg.pinv(cm.J)
                alpha = new
            else:
                alpha = alpha + step
            k = start + s + 1
            if k % record_every == 0:
                states[rec] = alpha
                rec += 1
            if not np.all(np.abs(alpha) <= DIVERGENCE_LIMIT):
                partial = states[:rec]
                traj = Trajectory(eta * record_every * np.arange(rec), partial, None, "sgd",
                                  {"eta": eta, "batch": batch, "seed": seed, "diverged_at": k})
                raise DivergenceError(
                    f"SGD diverged at step {k}: |alpha| = {np.abs(alpha).max():.3g} > 1e6",
                    traj)

    states = states[:rec]
    times = eta * record_every * np.arange(rec)
    losses = _quadratic_loss(phi, y)(states)
    config = {"eta": eta, "batch": batch, "epochs": epochs, "seed": seed,
              "step_size": eta, "record_every": record_every}
    return Trajectory(times, states, losses, "sgd", config)


class SGDBasisRegressor(RegressorMixin, BaseEstimator):
    """Basis-function least squares fitted by plain mini-batch SGD.

    Parameters
    ----------
    basis : BasisSet or str, default="1,x"
    eta : float, default=0.01
        Learning rate.
    batch_size : int, default=32
    n_epochs : int, default=1000
        Number of SGD steps.
    seed : int, default=0
    alpha0 : array-like, optional
        Starting coefficients (zeros by default).
    record_every : int, default=1

    Attributes
    ----------
    coef_ : ndarray of shape (K,)
    trajectory_ : Trajectory
    """

    def __init__(self, basis="1,x", eta=0.01, batch_size=32, n_epochs=1000, seed=0,
                 alpha0=None, record_every=1):
        self.basis = basis
        self.eta = eta
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.seed = seed
        self.alpha0 = alpha0
        self.record_every = record_every

    def fit(self, X, y):
        x = as_inputs(X)
        basis = parse_basis(self.basis)
        data = Dataset(x, y, 0.0)
        alpha0 = np.zeros(basis.K) if self.alpha0 is None else self.alpha0
        batch = min(int(self.batch_size), data.N)
        self.basis_ = basis
        self.trajectory_ = sgd_simulate(data, basis, None, alpha0, self.eta, batch,
                                        int(self.n_epochs), self.seed,
                                        record_every=self.record_every)
        self.coef_ = self.trajectory_.states[-1].copy()
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.basis_.features(X) @ self.coef_

    def stationary_covariance(self, burn_in: float = 0.5) -> np.ndarray:
        """Sample covariance of the recorded states after the burn-in fraction."""
        check_is_fitted(self, "trajectory_")
        s = self.trajectory_.states
        tail = s[int(burn_in * len(s)):]
        return np.atleast_2d(np.cov(tail, rowvar=False))


# -- continuous flow ----------------------------------------------------------

def dinf_field_from(a2, a4, G, sigma: float) -> Callable[[np.ndarray], np.ndarray]:
    """``delta_alpha -> D_inf`` with the moment tensors and ``G`` frozen."""
    from .diffusion import d_infinity

    return lambda d: d_infinity(a2, a4, G, d, sigma)


def geodesic_flow(a2, G, delta_alpha0, epsilon: float, dinf_field, t_grid,
                  alpha_bar=None) -> Trajectory:
    """Integrate ``d alpha/dt = -2 G A d + 2 eps D_inf(d) G A d`` with classic RK4.

    One RK4 step per interval of ``t_grid``; ``D_inf`` is re-evaluated at every
    stage. States are ``alpha_bar + d`` (``alpha_bar`` defaults to zero).
    """
    A = as_square(getattr(a2, "a2", a2), name="A")
    K = A.shape[0]
    Gm = getattr(G, "G", G)
    Gm = np.eye(K) if Gm is None else as_square(Gm, K, name="G")
    GA = Gm @ A
    d = as_vector(delta_alpha0, K, name="delta_alpha0").copy()
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.shape[0] < 1 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must start at 0 and increase strictly")
    bar = np.zeros(K) if alpha_bar is None else as_vector(alpha_bar, K)

    if epsilon == 0 or dinf_field is None:
        def rhs(x):
            return -2.0 * GA @ x
    else:
        def rhs(x):
            v = GA @ x
            return -2.0 * v + 2.0 * epsilon * dinf_field(x) @ v

    out = np.empty((t.shape[0], K))
    out[0] = d
    for n in range(1, t.shape[0]):
        h = t[n] - t[n - 1]
        k1 = rhs(d)
        k2 = rhs(d + 0.5 * h * k1)
        k3 = rhs(d + 0.5 * h * k2)
        k4 = rhs(d + h * k3)
        new = d + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        old_norm = np.linalg.norm(d)
        if not np.all(np.isfinite(new)) or (old_norm > 0 and np.linalg.norm(new) > 2 * old_norm):
            raise StepSizeError(
                f"state norm more than doubled at t={t[n]:.6g} (h={h:.3g}); use a smaller step")
        d = new
        out[n] = d
    config = {"epsilon": epsilon, "step_size": float(np.max(np.diff(t))) if len(t) > 1 else 0.0}
    return Trajectory(t, bar + out, None, "ode", config)


def closed_form_solution(a2, delta_alpha0, t: float, rate_convention: str = "flow",
                         alpha_bar=None) -> np.ndarray:
    """``alpha_bar + exp(-r t A) d0`` with ``r = 1`` ("paper") or ``r = 2`` ("flow").

    The matrix exponential is taken through the eigendecomposition of the
    symmetric ``A``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    try:
        r = RATE_CONVENTIONS[rate_convention]
    except KeyError:
        raise ValueError(f"rate_convention must be one of {sorted(RATE_CONVENTIONS)}") from None
    A = as_square(getattr(a2, "a2", a2), name="A")
    d0 = as_vector(delta_alpha0, A.shape[0], name="delta_alpha0")
    lam, Q = np.linalg.eigh(0.5 * (A + A.T))
    out = Q @ (np.exp(-r * t * lam) * (Q.T @ d0))
    return out if alpha_bar is None else as_vector(alpha_bar, A.shape[0]) + out


# -- stability ----------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: tuple[complex, ...]
    classification: str
    min_abs_eigenvalue: float
    tolerance: float

    def to_dict(self) -> dict:
        return {"eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
                "classification": self.classification,
                "min_abs_eigenvalue": self.min_abs_eigenvalue,
                "tolerance": self.tolerance}


def stability_classify(matrix, tolerance: float = 1e-10) -> StabilityReport:
    """Stable if every ``Re(lambda) > tol``; unstable if any ``Re(lambda) < -tol``;
    marginal otherwise."""
    M = as_square(matrix, name="matrix")
    lam = np.linalg.eigvals(M)
    re = lam.real
    if np.all(re > tolerance):
        label = "stable"
    elif np.any(re < -tolerance):
        label = "unstable"
    else:
        label = "marginal"
    order = np.lexsort((lam.imag, lam.real))
    return StabilityReport(tuple(complex(z) for z in lam[order]), label,
                           float(np.min(np.abs(lam))), float(tolerance))


# -- stationary variance --------------------------------------------------------

def gibbs_oracle(a2, beta: float, n_samples: int, seed: int = 0, thin: int = 1,
                 burn: int = 100) -> np.ndarray:
    """Gibbs sampler for the density ``exp(-beta d^T A d)``.

    Each coordinate update draws from its Gaussian full conditional,
    ``N(-sum_{j != i} A_ij d_j / A_ii, 1 / (2 beta A_ii))``. For ``K = 1`` this
    is direct sampling. Returns ``(n_samples, K)``.
    """
    A = as_square(getattr(a2, "a2", a2), name="A")
    K = A.shape[0]
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if np.any(np.diag(A) <= 0):
        raise ValueError("the Gibbs oracle needs a positive diagonal")
    rng = _random.stream(seed, 11)
    sd = 1.0 / np.sqrt(2.0 * beta * np.diag(A))
    if K == 1:
        return (sd[0] * rng.standard_normal(n_samples))[:, None]
    total = burn + n_samples * thin
    z = rng.standard_normal((total, K))
    d = np.zeros(K)
    out = np.empty((n_samples, K))
    for s in range(total):
        for i in range(K):
            mean = -(A[i] @ d - A[i, i] * d[i]) / A[i, i]
            d[i] = mean + sd[i] * z[s, i]
        if s >= burn and (s - burn) % thin == 0:
            out[(s - burn) // thin] = d
    return out


@dataclass(frozen=True, eq=False)
class StationaryVarianceReport:
    points: list
    fitted_c: float
    reference_c: float
    slope_logdet_vs_logbeta: float
    max_isotropy_distance: float
    excluded: list

    def to_dict(self) -> dict:
        return {"points": self.points, "fitted_c": self.fitted_c, "reference_c": self.reference_c,
                "slope_logdet_vs_logbeta": self.slope_logdet_vs_logbeta,
                "max_isotropy_distance": self.max_isotropy_distance,
                "excluded": self.excluded}


def _isotropy_distance(M: np.ndarray, c: float) -> float:
    """``||M - c I||_2 / c``."""
    return float(np.linalg.norm(M - c * np.eye(M.shape[0]), 2) / abs(c))


def stationary_variance_experiment(basis, sigma: float, eta_grid: Sequence[float],
                                   batch_grid: Sequence[int], epochs: int, burn_in: int,
                                   seed: int = 0, N: int = 200_000, alpha_bar=None,
                                   equal_time: bool = True, oracle_samples: int = 200_000,
                                   record_every: int = 1) -> StationaryVarianceReport:
    """Measure the stationary SGD covariance over a grid of ``(eta, b)``.

    ``epochs``/``burn_in`` are step counts for the largest ``eta``; with
    ``equal_time`` the other grid points run ``eta_max / eta`` times longer so
    every run covers the same continuous time. Each point also carries the
    Gibbs-oracle covariance for ``beta = 2 b / eta``.
    """
    basis = parse_basis(basis)
    K = basis.K
    if burn_in >= epochs:
        raise ValueError("burn_in must be < epochs")
    from .moments import estimate_a2

    A = estimate_a2(basis, exact=True).a2
    lam_max = float(np.linalg.eigvalsh(2.0 * A).max())
    etas = [float(e) for e in eta_grid]
    if any(e >= 1.0 / lam_max for e in etas):
        raise ValueError(f"every eta must satisfy eta < 1/lambda_max(2A) = {1 / lam_max:.4g}")
    bar = np.zeros(K) if alpha_bar is None else as_vector(alpha_bar, K)
    data = generate_dataset(basis, bar, N, sigma, seed=seed)
    eta_ref = max(etas)

    points, excluded = [], []
    grid = [(e, int(b)) for b in batch_grid for e in etas]
    for i, (eta, b) in enumerate(grid):
        factor = eta_ref / eta if equal_time else 1.0
        n_steps = int(round(epochs * factor))
        n_burn = int(round(burn_in * factor))
        beta = 2.0 * b / eta
        entry = {"eta": eta, "batch": b, "beta": beta, "steps": n_steps, "burn_in": n_burn}
        try:
            traj = sgd_simulate(data, basis, None, bar, eta, b, n_steps,
                                seed=int(_random.stream(seed, 3, i).integers(2**31)),
                                record_every=record_every)
        except DivergenceError as exc:
            entry["diverged"] = str(exc)
            excluded.append(entry)
            continue
        tail = traj.states[n_burn // record_every:]
        cov = np.atleast_2d(np.cov(tail, rowvar=False))
        q = len(tail) // 4
        cov3 = np.atleast_2d(np.cov(tail[2 * q:3 * q], rowvar=False))
        cov4 = np.atleast_2d(np.cov(tail[3 * q:], rowvar=False))
        oracle = np.atleast_2d(np.cov(gibbs_oracle(A, beta, oracle_samples,
                                                   seed=seed + 1000 + i), rowvar=False))
        M = beta * cov @ A
        entry.update({
            "covariance": cov.tolist(),
            "det_covariance": float(np.linalg.det(cov)),
            "oracle_covariance": oracle.tolist(),
            "oracle_det": float(np.linalg.det(oracle)),
            "beta_sigma_A": M.tolist(),
            "point_c": float(np.trace(M) / K),
            "stationarity_rel_diff": float(np.linalg.norm(cov4 - cov3) / np.linalg.norm(cov3)),
            "variance_rel_error": float(np.max(np.abs(np.diag(cov) - np.diag(oracle))
                                               / np.diag(oracle))),
        })
        points.append(entry)

    if not points:
        return StationaryVarianceReport([], math.nan, 1.0, math.nan, math.nan, excluded)
    c = float(np.mean([p["point_c"] for p in points]))
    for p in points:
        p["isotropy_distance"] = _isotropy_distance(np.array(p["beta_sigma_A"]), c)
    if len({p["beta"] for p in points}) > 1:
        slope = float(np.polyfit(np.log([p["beta"] for p in points]),
                                 np.log([p["det_covariance"] for p in points]), 1)[0])
    else:
        slope = math.nan
    return StationaryVarianceReport(points, c, 1.0, slope,
                                    max(p["isotropy_distance"] for p in points), excluded)


# -- order bound and stationary potential -------------------------------------

class RegimeNotApplicable(ValueError):
    """``G A G`` has a non-negative top eigenvalue."""


class BoundUndefined(ValueError):
    """The order-bound denominator is not positive."""


def order_bound(G, a2, F, sigma: float) -> float:
    """Lower bound on the order of ``|alpha - alpha_bar|`` when ``G A G`` is negative definite.

    ``sqrt(sigma^2 |l_GAG| / (det(F^2) |l_G2| - det(F) |l_GAG|))`` with ``l_X``
    the largest eigenvalue of ``X``.
    """
    A = as_square(getattr(a2, "a2", a2), name="A")
    K = A.shape[0]
    Gm = getattr(G, "G", G)
    Gm = np.eye(K) if Gm is None else as_square(Gm, K, name="G")
    Fm = as_square(getattr(F, "F", F), K, name="F")
    GAG = Gm @ A @ Gm
    lam_gag = float(np.max(np.linalg.eigvals(GAG).real))
    if lam_gag >= 0:
        raise RegimeNotApplicable(
            f"max eigenvalue of G A G is {lam_gag:.4g} >= 0; the bound needs a negative one")
    lam_g2 = float(np.max(np.linalg.eigvals(Gm @ Gm).real))
    detF = float(np.linalg.det(Fm))
    denom = float(np.linalg.det(Fm @ Fm)) * abs(lam_g2) - detF * abs(lam_gag)
    if not denom > 0:
        raise BoundUndefined(f"denominator det(F^2)|l_G2| - det(F)|l_GAG| = {denom:.4g} <= 0")
    return math.sqrt(sigma**2 * abs(lam_gag) / denom)


def potential_phi(sigma_alpha, mean, alpha, beta: float) -> float:
    """Gaussian steady-state potential ``-beta^-1 log rho``.

    ``beta^-1 [K/2 log|S| + K/2 log 2 pi + 1/2 (a - m)^T S^-1 (a - m)]``
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    S = as_square(sigma_alpha, name="sigma_alpha")
    K = S.shape[0]
    d = as_vector(alpha, K) - as_vector(mean, K)
    try:
        c, low = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise ValueError("sigma_alpha must be symmetric positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    quad = float(d @ linalg.cho_solve((c, low), d))
    return (0.5 * K * logdet + 0.5 * K * math.log(2 * math.pi) + 0.5 * quad) / beta


def potential_phi_gradient(sigma_alpha, mean, alpha, beta: float, G=None,
                           variant: str = "gaussian") -> np.ndarray:
    """Gradient of :func:`potential_phi` in ``alpha``.

    ``variant="gaussian"`` is ``beta^-1 S^-1 (a - m)``; ``variant="coupled"``
    is the ``2 beta^-1 G S^-1 (a - m)`` form, kept as a diagnostic.
    """
    S = as_square(sigma_alpha, name="sigma_alpha")
    K = S.shape[0]
    d = as_vector(alpha, K) - as_vector(mean, K)
    g = np.linalg.solve(S, d) / beta
    if variant == "gaussian":
        return g
    if variant == "coupled":
        Gm = np.eye(K) if G is None else as_square(getattr(G, "G", G), K)
        return 2.0 * Gm @ g
    raise ValueError("variant must be 'gaussian' or 'coupled'")
