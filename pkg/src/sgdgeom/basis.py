"""Scalar basis families and their exact Gaussian moments.

A :class:`BasisSet` bundles ``K`` maps ``phi_mu: R -> R``. Monomial and Fourier
families carry an analytic provider for ``E[prod_k phi_{i_k}(x)]`` under a
Gaussian input law; lookup-table bases only support sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import EvaluationError, as_inputs

KINDS = ("monomial", "fourier", "custom-table")


def gaussian_raw_moment(n: int, mean: float = 0.0, variance: float = 1.0) -> float:
    """``E[x**n]`` for ``x ~ N(mean, variance)``.

    Binomial expansion around the mean with central moments ``(k-1)!! s**k``.
    """
    if n < 0:
        raise ValueError("moment order must be non-negative")
    s = math.sqrt(variance)
    total = 0.0
    for k in range(0, n + 1, 2):
        central = float(np.prod(np.arange(k - 1, 0, -2))) if k else 1.0
        total += math.comb(n, k) * mean ** (n - k) * central * s**k
    return total


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Ordered basis ``phi_1..phi_K`` used by ``c(alpha; x) = sum alpha^mu phi_mu(x)``.

    Parameters
    ----------
    kind : {"monomial", "fourier", "custom-table"}
    params : dict
        Family parameters (``degrees``; ``n_harmonics``/``omega``; ``grid``/``table``).
    moment_provider : callable, optional
        ``(index_tuple, mean, variance) -> float`` giving the exact expectation of
        the product of the indexed basis functions.
    """

    kind: str
    functions: tuple[Callable[[np.ndarray], np.ndarray], ...] = field(repr=False)
    params: dict = field(default_factory=dict)
    labels: tuple[str, ...] = ()
    moment_provider: Callable[[tuple[int, ...], float, float], float] | None = field(
        default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if len(self.functions) < 1:
            raise ValueError("a basis needs at least one function (K >= 1)")

    @property
    def K(self) -> int:
        return len(self.functions)

    @property
    def has_exact_moments(self) -> bool:
        return self.moment_provider is not None

    def features(self, x) -> np.ndarray:
        """Evaluate all basis functions; returns an ``(N, K)`` design matrix."""
        x = as_inputs(x)
        phi = np.empty((x.shape[0], self.K))
        for mu, f in enumerate(self.functions):
            phi[:, mu] = f(x)
        bad = ~np.isfinite(phi)
        if bad.any():
            i, mu = np.argwhere(bad)[0]
            raise EvaluationError(
                f"basis function {mu} ({self.labels[mu] if self.labels else mu}) "
                f"is non-finite at sample {i} (x={x[i]!r})")
        return phi

    def exact_moment(self, index: Sequence[int], mean: float = 0.0,
                     variance: float = 1.0) -> float:
        if self.moment_provider is None:
            raise ValueError(f"basis kind {self.kind!r} has no analytic moments")
        return float(self.moment_provider(tuple(index), mean, variance))

    def to_spec(self) -> dict:
        """JSON-able description that :func:`parse_basis` reverses."""
        spec = {"kind": self.kind}
        for key, value in self.params.items():
            spec[key] = np.asarray(value).tolist() if isinstance(value, np.ndarray) else value
        return spec

    # -- constructors -----------------------------------------------------

    @classmethod
    def monomial(cls, degrees: Sequence[int] | int) -> "BasisSet":
        """Monomials ``x**d``; an int ``n`` means degrees ``0..n-1``."""
        if isinstance(degrees, (int, np.integer)):
            degrees = list(range(int(degrees)))
        degrees = tuple(int(d) for d in degrees)
        if any(d < 0 for d in degrees):
            raise ValueError("monomial degrees must be non-negative")

        def make(d):
            if d == 0:
                return lambda x: np.ones_like(x)
            return lambda x: x**d

        def provider(index, mean, variance):
            return gaussian_raw_moment(sum(degrees[i] for i in index), mean, variance)

        labels = tuple(_monomial_label(d) for d in degrees)
        return cls("monomial", tuple(make(d) for d in degrees),
                   {"degrees": list(degrees)}, labels, provider)

    @classmethod
    def fourier(cls, n_harmonics: int, omega: float = 1.0,
                include_constant: bool = True) -> "BasisSet":
        """``1, cos(w x), sin(w x), ..., cos(n w x), sin(n w x)``."""
        # each function is a trig polynomial: list of (frequency, complex coefficient)
        terms: list[list[tuple[float, complex]]] = []
        labels = []
        if include_constant:
            terms.append([(0.0, 1.0)])
            labels.append("1")
        for n in range(1, int(n_harmonics) + 1):
            w = n * omega
            terms.append([(w, 0.5), (-w, 0.5)])
            labels.append(f"cos({n}wx)")
            terms.append([(w, -0.5j), (-w, 0.5j)])
            labels.append(f"sin({n}wx)")

        def make(n, trig):
            w = n * omega
            return (lambda x: np.cos(w * x)) if trig == "cos" else (lambda x: np.sin(w * x))

        functions = []
        if include_constant:
            functions.append(lambda x: np.ones_like(x))
        for n in range(1, int(n_harmonics) + 1):
            functions += [make(n, "cos"), make(n, "sin")]

        def provider(index, mean, variance):
            # E[exp(i k x)] = exp(i k m - k^2 s^2 / 2), expanded over all term products
            total = 0.0 + 0.0j
            for combo in _product_terms([terms[i] for i in index]):
                k = sum(f for f, _ in combo)
                coef = np.prod([c for _, c in combo])
                total += coef * np.exp(1j * k * mean - 0.5 * k * k * variance)
            return float(total.real)

        return cls("fourier", tuple(functions),
                   {"n_harmonics": int(n_harmonics), "omega": float(omega),
                    "include_constant": bool(include_constant)},
                   tuple(labels), provider)

    @classmethod
    def table(cls, grid, table) -> "BasisSet":
        """Piecewise-linear basis from a lookup table of shape ``(K, len(grid))``.

        Outside the grid the edge values are held constant.
        """
        grid = np.asarray(grid, dtype=float)
        table = np.atleast_2d(np.asarray(table, dtype=float))
        if grid.ndim != 1 or table.shape[1] != grid.shape[0]:
            raise ValueError("table must have shape (K, len(grid))")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("table grid must be strictly increasing")
        functions = tuple((lambda row: (lambda x: np.interp(x, grid, row)))(row)
                          for row in table)
        return cls("custom-table", functions, {"grid": grid, "table": table},
                   tuple(f"table[{k}]" for k in range(table.shape[0])))


def _monomial_label(d: int) -> str:
    return "1" if d == 0 else ("x" if d == 1 else f"x^{d}")


def _product_terms(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for tail in _product_terms(lists[1:]):
            yield (head,) + tail


_TOKEN = re.compile(r"^x(?:\^(\d+))?$")


def parse_basis(spec) -> BasisSet:
    """Build a basis from a compact string or a :meth:`BasisSet.to_spec` dict.

    Strings: ``"1,x,x^2"`` (monomials), ``"monomial:3"`` (degrees 0..2),
    ``"fourier:2"`` or ``"fourier:2:0.5"`` (harmonics, omega).

    >>> parse_basis("1,x,x^2").params["degrees"]
    [0, 1, 2]
    """
    if isinstance(spec, BasisSet):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "monomial":
            return BasisSet.monomial(spec["degrees"])
        if kind == "fourier":
            return BasisSet.fourier(spec["n_harmonics"], spec.get("omega", 1.0),
                                    spec.get("include_constant", True))
        if kind == "custom-table":
            return BasisSet.table(spec["grid"], spec["table"])
        raise ValueError(f"unknown basis kind {kind!r}")
    text = str(spec).replace(" ", "").strip("()")
    if text.startswith("monomial:"):
        return BasisSet.monomial(int(text.split(":")[1]))
    if text.startswith("fourier:"):
        parts = text.split(":")
        omega = float(parts[2]) if len(parts) > 2 else 1.0
        return BasisSet.fourier(int(parts[1]), omega)
    degrees = []
    for tok in text.split(","):
        if tok == "1":
            degrees.append(0)
            continue
        m = _TOKEN.match(tok)
        if not m:
            raise ValueError(f"cannot parse basis token {tok!r}")
        degrees.append(int(m.group(1)) if m.group(1) else 1)
    return BasisSet.monomial(degrees)


class BasisFeatures(TransformerMixin, BaseEstimator):
    """Map scalar inputs to the ``(n_samples, K)`` basis design matrix.

    Parameters
    ----------
    basis : BasisSet or str, default="1,x,x^2"
        Basis or a :func:`parse_basis` string.
    """

    def __init__(self, basis="1,x,x^2"):
        self.basis = basis

    def fit(self, X, y=None):
        self.basis_ = parse_basis(self.basis)
        self.n_features_in_ = 1
        self.n_basis_ = self.basis_.K
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.features(X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        return np.asarray(self.basis_.labels, dtype=object)
