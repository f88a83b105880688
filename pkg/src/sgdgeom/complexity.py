"""Path potential, action, distribution complexity and information flow.

Time series are computed on the trajectory's own grid. Velocities use second
order central differences (``numpy.gradient``) and running integrals use the
cumulative trapezoid rule, so every quantity here shares one stencil.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ._validation import DimensionError, as_vector
from .dynamics import Trajectory

NORMALIZATION_TOL = 1e-12


def _velocities(traj: Trajectory) -> np.ndarray:
    if len(traj) < 2:
        raise ValueError("trajectory needs at least 2 points")
    edge = 2 if len(traj) >= 3 else 1
    return np.gradient(traj.states, traj.times, axis=0, edge_order=edge)


def speed_integrals(traj: Trajectory, velocities=None) -> np.ndarray:
    """Running ``int_0^t (alpha_dot^mu)^2 dt`` per coordinate, shape ``(T, K)``."""
    v = _velocities(traj) if velocities is None else np.asarray(velocities, dtype=float)
    return cumulative_trapezoid(v**2, traj.times, axis=0, initial=0.0)


def potential_v(traj: Trajectory, hessian_at: Callable[[np.ndarray], np.ndarray],
                velocities=None, frozen: bool = False) -> np.ndarray:
    """``V(t) = sum_mu H_mumu(alpha(t)) int_0^t (alpha_dot^mu)^2 dt``.

    With ``frozen=True`` the Hessian diagonal is taken at the first state
    instead of the current one.
    """
    I = speed_integrals(traj, velocities)
    if frozen:
        h = np.diag(np.asarray(hessian_at(traj.states[0]), dtype=float))
        return I @ h
    diag = np.array([np.diag(np.asarray(hessian_at(a), dtype=float)) for a in traj.states])
    if diag.shape != I.shape:
        raise DimensionError(f"hessian diagonal has shape {diag.shape[1:]}, expected ({traj.K},)")
    return np.einsum("tk,tk->t", diag, I)


def _speed(traj: Trajectory, metric_field, velocities) -> np.ndarray:
    """``sqrt(alpha_dot^T D_tilde alpha_dot)`` along the trajectory."""
    v = _velocities(traj) if velocities is None else np.asarray(velocities, dtype=float)
    if metric_field is None:
        return np.linalg.norm(v, axis=1)
    eps = metric_field.epsilon
    out = np.empty(len(traj))
    for n, (a, vel) in enumerate(zip(traj.states, v)):
        D = metric_field.d_inf(a) if eps else None
        q = float(vel @ vel) + (eps * float(vel @ D @ vel) if eps else 0.0)
        if q < 0:
            if q < -1e-12 * max(float(vel @ vel), 1e-300):
                raise ValueError(f"negative metric speed^2 {q:.3g} at t={traj.times[n]:.6g}")
            q = 0.0
        out[n] = math.sqrt(q)
    return out


def action_series(traj: Trajectory, metric_field, v_series, velocities=None) -> np.ndarray:
    """Running action ``S(t) = int_0^t {sqrt(alpha_dot^T D_tilde alpha_dot) - V} dt``.

    ``metric_field=None`` means the Euclidean metric.
    """
    V = np.asarray(v_series, dtype=float)
    if V.shape != traj.times.shape:
        raise DimensionError("v_series must match the trajectory time grid")
    integrand = _speed(traj, metric_field, velocities) - V
    return cumulative_trapezoid(integrand, traj.times, initial=0.0)


def action(traj: Trajectory, metric_field, v_series, velocities=None) -> float:
    """Total action over the trajectory (see :func:`action_series`)."""
    return float(action_series(traj, metric_field, v_series, velocities)[-1])


def complexity(per_sample_grads, delta_alpha, sigma: float) -> float:
    """``(1 / 4 sigma^2) d^T [(1/N) sum g_i g_i^T] d`` with gradients taken at ``alpha_bar``."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    g = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    if g.shape[0] < 2:
        raise ValueError("need N >= 2 gradient rows")
    d = as_vector(delta_alpha, g.shape[1], name="delta_alpha")
    proj = g @ d
    return float(np.mean(proj**2) / (4.0 * sigma**2))


def complexity_std_error(per_sample_grads, delta_alpha, sigma: float) -> float:
    """Monte Carlo standard error of :func:`complexity`."""
    g = np.atleast_2d(np.asarray(per_sample_grads, dtype=float))
    d = as_vector(delta_alpha, g.shape[1], name="delta_alpha")
    terms = (g @ d) ** 2 / (4.0 * sigma**2)
    return float(terms.std(ddof=1) / math.sqrt(terms.shape[0]))


# -- information flow ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteProcess:
    """Past-to-future transition of a state made of several ensembles.

    ``joint[s, t]`` is the probability of past state ``s`` and future state
    ``t``; both index the product space of ``factor_sizes`` in C order.
    """

    factor_sizes: tuple[int, ...]
    joint: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.factor_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("factor_sizes must be positive integers")
        n = math.prod(sizes)
        P = np.asarray(self.joint, dtype=float)
        if P.shape != (n, n):
            raise DimensionError(f"joint table has shape {P.shape}, expected {(n, n)}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("joint probabilities must be finite and nonnegative")
        if abs(P.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"joint table sums to {P.sum()!r}, not 1")
        object.__setattr__(self, "factor_sizes", sizes)
        object.__setattr__(self, "joint", P)

    @property
    def past_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def ensemble_joint(self, v: int) -> np.ndarray:
        """Past/future joint table of ensemble ``v`` alone."""
        sizes = self.factor_sizes
        m = len(sizes)
        P = self.joint.reshape(sizes + sizes)
        keep = (v, m + v)
        return P.sum(axis=tuple(i for i in range(2 * m) if i not in keep))

    @classmethod
    def from_transition(cls, factor_sizes: Sequence[int], past, transition) -> "DiscreteProcess":
        """Build from a past distribution and a row-stochastic transition matrix."""
        p = np.asarray(past, dtype=float)
        T = np.asarray(transition, dtype=float)
        return cls(tuple(factor_sizes), p[:, None] * T)

    @classmethod
    def from_json(cls, source) -> "DiscreteProcess":
        """``{"factor_sizes": [...], "joint": [[...]]}`` as a dict, JSON string or path."""
        if isinstance(source, dict):
            obj = source
        elif isinstance(source, str) and source.lstrip().startswith("{"):
            obj = json.loads(source)
        else:
            with open(source) as fh:
                obj = json.load(fh)
        return cls(tuple(obj["factor_sizes"]), np.asarray(obj["joint"], dtype=float))

    def to_json(self) -> str:
        return json.dumps({"factor_sizes": list(self.factor_sizes),
                           "joint": self.joint.tolist()})


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def conditional_entropy(joint: np.ndarray) -> float:
    """``H(future | past)`` in nats for a table with past rows and future columns."""
    return _entropy(joint.ravel()) - _entropy(joint.sum(axis=1))


def information_flow(process: DiscreteProcess) -> float:
    """``sum_v H(F_v | P_v) - H(F | P)`` in nats."""
    per = sum(conditional_entropy(process.ensemble_joint(v))
              for v in range(len(process.factor_sizes)))
    return per - conditional_entropy(process.joint)


def product_states(factor_sizes: Sequence[int]) -> list[tuple[int, ...]]:
    """Microstates in the C order used by :class:`DiscreteProcess`."""
    return list(product(*(range(s) for s in factor_sizes)))


# -- action and complexity balance ---------------------------------------------

@dataclass(frozen=True, eq=False)
class ResidualSeries:
    times: np.ndarray
    S: np.ndarray
    C: np.ndarray
    dSdt: np.ndarray
    dCdt: np.ndarray
    V: np.ndarray
    residual: np.ndarray
    gap: np.ndarray

    @property
    def terminal_residual(self) -> float:
        return float(self.residual[-1])

    @property
    def peak_dSdt(self) -> float:
        return float(np.max(np.abs(self.dSdt)))

    def final_quarter_trend(self) -> float:
        """Least-squares slope of ``|S - 2 sigma^2 eps C|`` over the last quarter."""
        q = len(self.times) - len(self.times) // 4
        return float(np.polyfit(self.times[q:], self.gap[q:], 1)[0])

    def to_csv(self, path_or_buf) -> None:
        """Columns ``t, S, C, dSdt, dCdt, residual`` to a path or an open text stream."""
        if not hasattr(path_or_buf, "write"):
            with open(path_or_buf, "w", newline="") as fh:
                return self.to_csv(fh)
        w = csv.writer(path_or_buf, lineterminator="\n")
        w.writerow(["t", "S", "C", "dSdt", "dCdt", "residual"])
        for row in zip(self.times, self.S, self.C, self.dSdt, self.dCdt, self.residual):
            w.writerow([repr(float(v)) for v in row])


def theorem2_residual(traj: Trajectory, metric_field, dataset=None, sigma: float | None = None,
                      epsilon: float | None = None, basis=None,
                      hessian_at: Callable | None = None) -> ResidualSeries:
    """Residual of ``dS/dt = 2 sigma^2 eps dC/dt - sum_mu H_mumu int (alpha_dot^mu)^2 dt``.

    The trajectory should be a post-convergence window; accumulators start at
    its first point. ``C`` uses per-sample gradients at ``alpha_bar`` from
    ``dataset`` (with ``basis``) when given, otherwise their large-sample
    limit ``4 sigma^2 G A G^T``. ``H`` defaults to ``2 G^T A G``.
    """
    if len(traj) < 5:
        raise ValueError("window too short: need at least 5 points")
    mf = metric_field
    sigma = mf.sigma if sigma is None else float(sigma)
    eps = mf.epsilon if epsilon is None else float(epsilon)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    G, A = mf.G, mf.a2
    if hessian_at is None:
        H = 2.0 * G.T @ A @ G
        hessian_at = lambda a: H  # noqa: E731

    vel = _velocities(traj)
    V = potential_v(traj, hessian_at, vel)
    S = action_series(traj, mf, V, vel)

    if dataset is not None:
        from .model import loss_and_gradients

        if basis is None:
            raise ValueError("a dataset needs its basis")
        _, grads, _ = loss_and_gradients(dataset, basis, G, mf.alpha_bar)
        M = grads.T @ grads / grads.shape[0]
    else:
        M = 4.0 * sigma**2 * G @ A @ G.T
    deltas = traj.states - mf.alpha_bar
    C = np.einsum("tk,kl,tl->t", deltas, M, deltas) / (4.0 * sigma**2)

    dS = np.gradient(S, traj.times, edge_order=2)
    dC = np.gradient(C, traj.times, edge_order=2)
    r = np.abs(dS - 2 * sigma**2 * eps * dC + V)
    gap = np.abs(S - 2 * sigma**2 * eps * C)
    return ResidualSeries(traj.times, S, C, dS, dC, V, r, gap)
