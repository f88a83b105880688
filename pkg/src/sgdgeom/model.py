"""Basis-function regression model, synthetic data and loss gradients."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _random
from ._validation import DimensionError, EvaluationError, as_inputs, as_vector
from .basis import BasisSet, parse_basis


@dataclass(frozen=True)
class ParameterState:
    """Coefficients ``alpha`` and, optionally, the reference optimum ``alpha_bar``."""

    alpha: np.ndarray
    alpha_bar: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_vector(self.alpha, name="alpha"))
        if self.alpha_bar is not None:
            bar = as_vector(self.alpha_bar, self.alpha.shape[0], name="alpha_bar")
            object.__setattr__(self, "alpha_bar", bar)

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @property
    def delta(self) -> np.ndarray:
        """``alpha - alpha_bar`` (requires ``alpha_bar``)."""
        if self.alpha_bar is None:
            raise ValueError("ParameterState has no alpha_bar")
        return self.alpha - self.alpha_bar


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y_hat: np.ndarray
    noise_sigma: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = as_inputs(self.x)
        y = as_vector(self.y_hat, x.shape[0], name="y_hat")
        if x.shape[0] < 1:
            raise ValueError("a dataset needs N >= 1 samples")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y_hat", y)

    @property
    def N(self) -> int:
        return self.x.shape[0]

    def head(self, n: int) -> "Dataset":
        """First ``n`` samples (nested-stream prefix)."""
        return Dataset(self.x[:n], self.y_hat[:n], self.noise_sigma, dict(self.metadata))

    def to_csv(self, path) -> Path:
        """Write ``x,y_hat`` rows plus a ``<path>.json`` metadata sidecar."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y_hat"])
            for xi, yi in zip(self.x, self.y_hat):
                w.writerow([repr(float(xi)), repr(float(yi))])
        meta = dict(self.metadata)
        meta["sigma"] = self.noise_sigma
        meta["N"] = self.N
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
        return path

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(data[:, 0], data[:, 1], float(meta.get("sigma", 0.0)), meta)


def evaluate_model(basis: BasisSet, alpha, x) -> np.ndarray | float:
    """``c(alpha; x) = sum_mu alpha^mu phi_mu(x)``; scalar in, scalar out."""
    a = alpha.alpha if isinstance(alpha, ParameterState) else as_vector(alpha)
    if a.shape[0] != basis.K:
        raise DimensionError(f"alpha has length {a.shape[0]} but basis has K={basis.K}")
    scalar = np.ndim(x) == 0
    out = basis.features(x) @ a
    return float(out[0]) if scalar else out


def generate_dataset(basis: BasisSet, alpha_bar, N: int, sigma: float,
                     input_dist: tuple[float, float] = (0.0, 1.0),
                     seed: int = 0) -> Dataset:
    """Sample ``x ~ N(mean, variance)`` and ``y_hat = c(alpha_bar; x) + noise``.

    Inputs and noise come from separate nested chunk streams, so
    ``generate_dataset(..., N=n)`` is a prefix of the same call with larger ``N``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    mean, variance = map(float, input_dist)
    if variance <= 0:
        raise ValueError("input variance must be > 0")
    alpha_bar = as_vector(alpha_bar, basis.K, name="alpha_bar")

    x = _random.gaussian_inputs(N, seed, mean, variance, tag=0)
    y = basis.features(x) @ alpha_bar
    if sigma > 0:
        y = y + _random.gaussian_inputs(N, seed, 0.0, sigma**2, tag=1)
    meta = {
        "seed": int(seed),
        "N": int(N),
        "sigma": float(sigma),
        "alpha_bar": alpha_bar.tolist(),
        "input_mean": mean,
        "input_variance": variance,
        "K": basis.K,
        "basis": basis.to_spec(),
    }
    return Dataset(x, y, float(sigma), meta)


def _coupling_array(coupling, K: int) -> np.ndarray:
    if coupling is None:
        return np.eye(K)
    G = getattr(coupling, "G", coupling)
    G = np.asarray(G, dtype=float)
    if G.shape != (K, K):
        raise DimensionError(f"coupling matrix has shape {G.shape}, expected ({K}, {K})")
    return G


def loss_and_gradients(dataset: Dataset, basis: BasisSet, coupling, alpha):
    """Mean squared error and per-sample gradients.

    Row ``i`` of the gradient matrix is the gradient of
    ``f_i = (y_hat_i - c(alpha; x_i))**2`` where
    ``dc/dalpha^mu = sum_eta G[eta, mu] phi_eta(x)``.

    Returns
    -------
    loss : float
    per_sample_grads : ndarray of shape (N, K)
    mean_grad : ndarray of shape (K,)
    """
    a = alpha.alpha if isinstance(alpha, ParameterState) else as_vector(alpha)
    if a.shape[0] != basis.K:
        raise DimensionError(f"alpha has length {a.shape[0]} but basis has K={basis.K}")
    G = _coupling_array(coupling, basis.K)
    phi = basis.features(dataset.x)
    resid = dataset.y_hat - phi @ a
    grads = -2.0 * resid[:, None] * (phi @ G)
    bad = ~np.isfinite(grads).all(axis=1) | ~np.isfinite(resid)
    if bad.any():
        raise EvaluationError(f"non-finite gradient at sample index {int(np.argmax(bad))}")
    return float(np.mean(resid**2)), grads, grads.mean(axis=0)


def dataset_from_metadata(meta: dict) -> Dataset:
    """Regenerate a dataset from its sidecar metadata record."""
    basis = parse_basis(meta["basis"])
    return generate_dataset(basis, meta["alpha_bar"], int(meta["N"]), float(meta["sigma"]),
                            (meta.get("input_mean", 0.0), meta.get("input_variance", 1.0)),
                            int(meta["seed"]))
