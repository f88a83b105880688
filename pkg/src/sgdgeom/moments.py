"""Second- and fourth-order moment tensors of a basis under a Gaussian input law.

Sampled estimates accumulate per-chunk means and centred sums of squares and
merge them with a fixed pairwise tree, so results do not depend on how the
chunks were scheduled. Every estimate carries its standard errors.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _random
from ._validation import as_inputs
from .basis import BasisSet, parse_basis

DEFAULT_MAX_K = 8


# -- accumulation -------------------------------------------------------------

@dataclass
class _Stats:
    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray) -> "_Stats":
        mean = values.mean(axis=0)
        return cls(values.shape[0], mean, ((values - mean) ** 2).sum(axis=0))

    def merge(self, other: "_Stats") -> "_Stats":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        return _Stats(n, mean, m2)

    def variance(self) -> np.ndarray:
        # unbiased (n - 1) correction
        return self.m2 / (self.n - 1) if self.n > 1 else np.zeros_like(self.m2)

    def std_error(self) -> np.ndarray:
        return np.sqrt(self.variance() / self.n)


def _tree_merge(parts: list[_Stats]) -> _Stats:
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _sample_stats(basis: BasisSet, x: np.ndarray | None, N: int, seed: int,
                  input_dist, reducer, features=None) -> _Stats:
    """Apply ``reducer(phi_chunk) -> (n, M)`` per chunk and merge the statistics."""
    parts = []
    if features is not None:
        for _, a, b in _random.chunk_bounds(features.shape[0]):
            parts.append(_Stats.of(reducer(features[a:b])))
        return _tree_merge(parts)
    if x is None:
        mean, variance = input_dist
        x = _random.gaussian_inputs(N, seed, mean, variance, tag=0)
    for _, a, b in _random.chunk_bounds(x.shape[0]):
        parts.append(_Stats.of(reducer(basis.features(x[a:b]))))
    return _tree_merge(parts)


def canonical_indices(K: int, order: int = 4) -> list[tuple[int, ...]]:
    """Sorted index tuples; one per permutation class."""
    return list(itertools.combinations_with_replacement(range(K), order))


def _resolve_k(basis: BasisSet | None, features, max_k: int):
    if features is not None:
        features = np.asarray(features, dtype=float)
        if features.ndim != 2:
            raise ValueError("features must be an (N, K) matrix")
        K = features.shape[1]
    else:
        K = basis.K
    if K > max_k:
        raise ValueError(f"K={K} exceeds the configured cap of {max_k}")
    return K, features


# -- tensor types -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentTensor2:
    """``A[mu, nu] = <phi_mu(x) phi_nu(x)>`` with per-entry standard errors."""

    a2: np.ndarray
    sample_count: int
    std_error: np.ndarray
    exact: bool = False

    @property
    def K(self) -> int:
        return self.a2.shape[0]

    @property
    def max_std_error(self) -> float:
        return float(self.std_error.max())

    def to_dict(self) -> dict:
        return {"shape": list(self.a2.shape), "values": self.a2.tolist(),
                "N": self.sample_count, "std_error": self.std_error.tolist(),
                "exact": self.exact}


@dataclass(frozen=True, eq=False)
class MomentTensor4:
    """Fully symmetric ``A[p, eta, zeta, k] = <phi_p phi_eta phi_zeta phi_k>``.

    Only the canonical (sorted-index) entries are stored; :attr:`a4` expands them.
    """

    K: int
    entries: np.ndarray
    sample_count: int
    std_errors: np.ndarray
    exact: bool = False
    _lookup: dict = field(default=None, repr=False)

    def __post_init__(self):
        idx = canonical_indices(self.K)
        if len(idx) != self.entries.shape[0]:
            raise ValueError("entry count does not match K(K+1)(K+2)(K+3)/24")
        object.__setattr__(self, "_lookup", {t: i for i, t in enumerate(idx)})

    def __getitem__(self, index) -> float:
        return float(self.entries[self._lookup[tuple(sorted(index))]])

    @property
    def max_std_error(self) -> float:
        return float(self.std_errors.max())

    @cached_property
    def a4(self) -> np.ndarray:
        full = np.empty((self.K,) * 4)
        for t, i in self._lookup.items():
            for perm in set(itertools.permutations(t)):
                full[perm] = self.entries[i]
        return full

    def to_dict(self) -> dict:
        return {"shape": [self.K] * 4,
                "canonical_indices": [list(t) for t in self._lookup],
                "values": self.entries.tolist(), "N": self.sample_count,
                "std_errors": self.std_errors.tolist(),
                "max_std_error": self.max_std_error, "exact": self.exact}


@dataclass(frozen=True, eq=False)
class VarianceMatrices:
    """``F = diag(var phi_mu)`` and ``Y[mu, nu] = var(phi_mu phi_nu)``."""

    F: np.ndarray
    Y: np.ndarray
    sample_count: int
    exact: bool = False


# -- estimators ---------------------------------------------------------------

def _pair_index(K):
    return np.triu_indices(K)


def estimate_a2(basis: BasisSet, N: int = 100_000, seed: int = 0, exact: bool = False,
                input_dist=(0.0, 1.0), x=None, max_k: int = DEFAULT_MAX_K,
                features=None) -> MomentTensor2:
    """Monte Carlo (or closed-form) second-moment matrix of the basis.

    With ``exact=True`` the analytic provider of ``basis`` is used and the
    standard errors are zero. Passing ``x`` estimates from those inputs instead
    of fresh draws; passing an ``(N, K)`` ``features`` matrix skips the basis
    altogether (``basis`` may then be None).
    """
    K, features = _resolve_k(basis, features, max_k)
    if exact:
        a2 = np.array([[basis.exact_moment((m, n), *input_dist) for n in range(K)]
                       for m in range(K)])
        return MomentTensor2(a2, 0, np.zeros((K, K)), exact=True)
    if features is not None:
        N = features.shape[0]
    elif x is not None:
        x = as_inputs(x)
        N = x.shape[0]
    if N < 2:
        raise ValueError("N must be >= 2")
    iu = _pair_index(K)
    stats = _sample_stats(basis, x, N, seed, input_dist,
                          lambda phi: phi[:, iu[0]] * phi[:, iu[1]], features)
    a2 = np.zeros((K, K))
    se = np.zeros((K, K))
    a2[iu] = stats.mean
    se[iu] = stats.std_error()
    # mirror the upper triangle: symmetric by construction
    a2 = np.triu(a2) + np.triu(a2, 1).T
    se = np.triu(se) + np.triu(se, 1).T
    return MomentTensor2(a2, stats.n, se)


def estimate_a4(basis: BasisSet, N: int = 100_000, seed: int = 0, exact: bool = False,
                input_dist=(0.0, 1.0), x=None, max_k: int = DEFAULT_MAX_K,
                features=None) -> MomentTensor4:
    """Monte Carlo (or closed-form) fourth-moment tensor in canonical storage."""
    K, features = _resolve_k(basis, features, max_k)
    idx = canonical_indices(K)
    if exact:
        vals = np.array([basis.exact_moment(t, *input_dist) for t in idx])
        return MomentTensor4(K, vals, 0, np.zeros(len(idx)), exact=True)
    if features is not None:
        N = features.shape[0]
    elif x is not None:
        x = as_inputs(x)
        N = x.shape[0]
    if N < 2:
        raise ValueError("N must be >= 2")
    cols = np.array(idx).T

    def reducer(phi):
        return phi[:, cols[0]] * phi[:, cols[1]] * phi[:, cols[2]] * phi[:, cols[3]]

    stats = _sample_stats(basis, x, N, seed, input_dist, reducer, features)
    return MomentTensor4(K, stats.mean, stats.n, stats.std_error())


def variance_matrices(basis: BasisSet, N: int = 100_000, seed: int = 0,
                      exact: bool = False, input_dist=(0.0, 1.0), x=None,
                      max_k: int = DEFAULT_MAX_K, features=None) -> VarianceMatrices:
    """Variances of the basis functions and of their pairwise products."""
    K, features = _resolve_k(basis, features, max_k)
    if exact:
        m = basis.exact_moment
        F = np.diag([m((i, i), *input_dist) - m((i,), *input_dist) ** 2 for i in range(K)])
        Y = np.array([[m((i, i, j, j), *input_dist) - m((i, j), *input_dist) ** 2
                       for j in range(K)] for i in range(K)])
        return VarianceMatrices(F, np.maximum(Y, 0.0), 0, exact=True)
    if features is not None:
        N = features.shape[0]
    elif x is not None:
        x = as_inputs(x)
        N = x.shape[0]
    if N < 2:
        raise ValueError("N must be >= 2")
    iu = _pair_index(K)
    # one stream: K single columns followed by the upper-triangle products
    stats = _sample_stats(basis, x, N, seed, input_dist,
                          lambda phi: np.hstack([phi, phi[:, iu[0]] * phi[:, iu[1]]]),
                          features)
    var = stats.variance()
    F = np.diag(var[:K])
    Y = np.zeros((K, K))
    Y[iu] = var[K:]
    Y = np.triu(Y) + np.triu(Y, 1).T
    return VarianceMatrices(F, Y, stats.n)


def dump_tensors(path, a2: MomentTensor2 | None = None, a4: MomentTensor4 | None = None,
                 seed: int | None = None, **extra) -> None:
    """Write tensors as JSON (shape, canonical entries, N, seed, standard errors)."""
    payload = dict(extra)
    payload["seed"] = seed
    if a2 is not None:
        payload["a2"] = a2.to_dict()
    if a4 is not None:
        payload["a4"] = a4.to_dict()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


class MomentEstimator(BaseEstimator):
    """Estimate the moment tensors of a basis.

    ``fit(X)`` uses the given scalar inputs; ``fit()`` with no data draws
    ``n_samples`` Gaussian inputs from ``seed``.

    Parameters
    ----------
    basis : BasisSet or str, default="1,x,x^2"
    n_samples : int, default=100_000
    seed : int, default=0
    exact : bool, default=False
        Use closed-form Gaussian moments instead of sampling.
    input_mean, input_variance : float
        Gaussian input law.
    fourth_order : bool, default=True
        Also estimate the fourth-moment tensor and the variance matrices.
    max_k : int, default=8

    Attributes
    ----------
    a2_ : MomentTensor2
    a4_ : MomentTensor4 or None
    variances_ : VarianceMatrices or None
    """

    def __init__(self, basis="1,x,x^2", n_samples=100_000, seed=0, exact=False,
                 input_mean=0.0, input_variance=1.0, fourth_order=True,
                 max_k=DEFAULT_MAX_K):
        self.basis = basis
        self.n_samples = n_samples
        self.seed = seed
        self.exact = exact
        self.input_mean = input_mean
        self.input_variance = input_variance
        self.fourth_order = fourth_order
        self.max_k = max_k

    def fit(self, X=None, y=None):
        basis = parse_basis(self.basis)
        if self.input_variance <= 0:
            raise ValueError("input_variance must be > 0")
        kw = dict(N=self.n_samples, seed=self.seed, exact=self.exact,
                  input_dist=(self.input_mean, self.input_variance),
                  x=None if X is None else as_inputs(X), max_k=self.max_k)
        self.basis_ = basis
        self.a2_ = estimate_a2(basis, **kw)
        self.a4_ = estimate_a4(basis, **kw) if self.fourth_order else None
        self.variances_ = variance_matrices(basis, **kw) if self.fourth_order else None
        self.n_samples_seen_ = self.a2_.sample_count
        return self

    def stability(self, tolerance=1e-10):
        """Classify the linearised dynamics driven by ``a2_``."""
        from .dynamics import stability_classify

        check_is_fitted(self, "a2_")
        return stability_classify(self.a2_.a2, tolerance)
