"""Numerical laboratory for the diffusion geometry of SGD on basis-function regression."""

from .basis import BasisFeatures, BasisSet, parse_basis
from .complexity import DiscreteProcess, action, complexity, information_flow, potential_v
from .config import ExperimentConfig, load_config
from .coupling import CouplingMatrix, ParameterMap, coupling_matrix, hessian
from .curvature import (MetricField, christoffel, einstein_fd, einstein_tensor_closed,
                        ricci_scalar_closed, ricci_scalar_fd)
from .diffusion import c_infinity, d_infinity, diffusion_metric, empirical_diffusion
from .dynamics import (SGDBasisRegressor, Trajectory, closed_form_solution, geodesic_flow,
                       sgd_simulate, stability_classify, stationary_variance_experiment)
from .experiments import run_experiment
from .model import Dataset, ParameterState, evaluate_model, generate_dataset, loss_and_gradients
from .moments import MomentEstimator, estimate_a2, estimate_a4, variance_matrices

__version__ = "0.1.0"

__all__ = [
    "BasisFeatures", "BasisSet", "parse_basis",
    "DiscreteProcess", "action", "complexity", "information_flow", "potential_v",
    "ExperimentConfig", "load_config",
    "CouplingMatrix", "ParameterMap", "coupling_matrix", "hessian",
    "MetricField", "christoffel", "einstein_fd", "einstein_tensor_closed",
    "ricci_scalar_closed", "ricci_scalar_fd",
    "c_infinity", "d_infinity", "diffusion_metric", "empirical_diffusion",
    "SGDBasisRegressor", "Trajectory", "closed_form_solution", "geodesic_flow",
    "sgd_simulate", "stability_classify", "stationary_variance_experiment",
    "run_experiment",
    "Dataset", "ParameterState", "evaluate_model", "generate_dataset", "loss_and_gradients",
    "MomentEstimator", "estimate_a2", "estimate_a4", "variance_matrices",
]
