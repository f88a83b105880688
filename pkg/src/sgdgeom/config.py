"""Experiment configuration: documented defaults, JSON files, environment and CLI overrides.

Resolution order (later wins): ``DEFAULTS`` < ``KIND_DEFAULTS[kind]`` < JSON
file < ``SGDGEOM_<FIELD>`` environment variables < explicit overrides.

Schema
------
kind : str
    One of ``KINDS``.
basis : str
    Basis spec accepted by :func:`sgdgeom.basis.parse_basis`.
N : int
    Sample count for Monte Carlo estimates and synthetic datasets.
sigma : float
    Label-noise standard deviation.
alpha_bar : list of float or null
    Reference optimum; null means ``0.3, -0.2, 0.1, ...`` truncated to ``K``.
delta_alpha : list of float or null
    Offset from ``alpha_bar``; null means ``0.05`` in every coordinate.
epsilon : float
    Metric scale; must satisfy ``epsilon < 1 / lambda_max(D_inf)``.
eta, batch, epochs : float, int, int
    SGD learning rate, mini-batch size and number of steps.
burn_in : float
    Fraction of steps discarded before measuring stationary statistics.
eta_grid, batch_grid : list
    Grid for the stationary-variance experiment.
t_final, dt : float
    Horizon and step of the continuous flow.
fd_step : float
    Finite-difference step for curvature.
rate_convention : {"flow", "paper"}
seed : int
out : str
    Output directory (not part of the config hash).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

KINDS = ("tensors", "identity1", "dynamics", "stability", "stationary-variance", "curvature",
         "complexity-action", "reproduce-all")
ENV_PREFIX = "SGDGEOM_"

DEFAULTS: dict = {
    "kind": "tensors",
    "basis": "1,x,x^2",
    "N": 100_000,
    "sigma": 0.1,
    "alpha_bar": None,
    "delta_alpha": None,
    "epsilon": 0.01,
    "eta": 0.01,
    "batch": 32,
    "epochs": 10_000,
    "burn_in": 0.5,
    "eta_grid": [0.01, 0.0046416, 0.0021544, 0.001],
    "batch_grid": [1],
    "t_final": 10.0,
    "dt": 1e-3,
    "fd_step": 1e-3,
    "rate_convention": "flow",
    "seed": 0,
    "out": "results",
}

KIND_DEFAULTS: dict = {
    "tensors": {"N": 1_000_000},
    "identity1": {"basis": "1,x", "N": 1_000_000},
    "dynamics": {"basis": "1,x"},
    "stationary-variance": {"basis": "x", "sigma": 0.5, "epochs": 400_000},
    "complexity-action": {"basis": "1,x"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = DEFAULTS["kind"]
    basis: str = DEFAULTS["basis"]
    N: int = DEFAULTS["N"]
    sigma: float = DEFAULTS["sigma"]
    alpha_bar: tuple | None = None
    delta_alpha: tuple | None = None
    epsilon: float = DEFAULTS["epsilon"]
    eta: float = DEFAULTS["eta"]
    batch: int = DEFAULTS["batch"]
    epochs: int = DEFAULTS["epochs"]
    burn_in: float = DEFAULTS["burn_in"]
    eta_grid: tuple = tuple(DEFAULTS["eta_grid"])
    batch_grid: tuple = tuple(DEFAULTS["batch_grid"])
    t_final: float = DEFAULTS["t_final"]
    dt: float = DEFAULTS["dt"]
    fd_step: float = DEFAULTS["fd_step"]
    rate_convention: str = DEFAULTS["rate_convention"]
    seed: int = DEFAULTS["seed"]
    out: str = field(default=DEFAULTS["out"], compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if self.N < 1:
            raise ConfigError("N", "must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma", "must be >= 0")
        if self.epsilon < 0:
            raise ConfigError("epsilon", "must be >= 0")
        if self.eta <= 0 or any(e <= 0 for e in self.eta_grid):
            raise ConfigError("eta", "learning rates must be > 0")
        if self.batch < 1 or any(b < 1 for b in self.batch_grid):
            raise ConfigError("batch", "must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in", "must be a fraction in [0, 1)")
        if self.t_final <= 0 or self.dt <= 0:
            raise ConfigError("dt", "t_final and dt must be > 0")
        if self.fd_step <= 0:
            raise ConfigError("fd_step", "must be > 0")
        if self.rate_convention not in ("flow", "paper"):
            raise ConfigError("rate_convention", "must be 'flow' or 'paper'")

    def resolved(self) -> dict:
        """Plain-JSON view with list-valued fields."""
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @property
    def hash(self) -> str:
        """sha256 of the canonical resolved config without ``out``."""
        body = {k: v for k, v in self.resolved().items() if k != "out"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return load_config(base=self.resolved(), overrides=changes)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    if value is None:
        return None
    try:
        if name in ("N", "batch", "epochs", "seed"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(float(value)) if isinstance(value, str) else int(value)
        if name in ("sigma", "epsilon", "eta", "burn_in", "t_final", "dt", "fd_step"):
            return float(value)
        if name in ("alpha_bar", "delta_alpha", "eta_grid", "batch_grid"):
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else value.split(",")
            cast = int if name == "batch_grid" else float
            return tuple(cast(v) for v in value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"cannot interpret {value!r}: {exc}") from None


def _env_values(environ) -> dict:
    out = {}
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = environ[key]
    return out


def load_config(path=None, overrides: dict | None = None, environ=None,
                base: dict | None = None) -> ExperimentConfig:
    """Resolve a config from defaults, an optional JSON file, env vars and overrides."""
    layers = []
    if path is not None:
        try:
            file_values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError("config", "top level must be a JSON object")
        layers.append(file_values)
    layers.append(_env_values(os.environ if environ is None else environ))
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})

    kind = DEFAULTS["kind"] if base is None else base["kind"]
    for layer in layers:
        kind = layer.get("kind", kind)
    merged = dict(DEFAULTS) if base is None else dict(base)
    if base is None:
        merged.update(KIND_DEFAULTS.get(kind, {}))
    for layer in layers:
        unknown = set(layer) - set(_FIELD_TYPES)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        merged.update(layer)
    values = {k: _coerce(k, v) for k, v in merged.items()}
    return ExperimentConfig(**values)
