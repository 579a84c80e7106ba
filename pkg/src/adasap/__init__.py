"""Sharpness-aware structured pruning toolkit.

Trains small channel-structured models with per-neuron adaptive weight
perturbations, prunes the least important channels on a geometric schedule,
finetunes under uniform flatness pressure, and evaluates the result on a
corruption benchmark. Everything runs on a built-in numpy autodiff engine
with numba-accelerated kernels (``ADASAP_NUMBA=0`` selects the pure-numpy
fallback).
"""

from .config import RunConfig, build_config, parse_config_file
from .importance import RhoBounds, resolve_rho, score_magnitude, score_taylor
from .kernels import BACKEND
from .models import ModelSpec, build_model, partition_view, reduce_model
from .optimizer import PerturbationConfig, SGDMomentum, adasap_step, compute_epsilon_hat
from .pipeline import RunSummary, ablation_matrix, export_pruned_model, run_pipeline
from .pruning import build_schedule, prune_step, sparsity_report
from .sharpness import perturbation_gap, top_hessian_eigenvalue
from .tensor import Tensor, backward, hessian_vector_product, no_grad

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ModelSpec",
    "PerturbationConfig",
    "RhoBounds",
    "RunConfig",
    "RunSummary",
    "SGDMomentum",
    "Tensor",
    "ablation_matrix",
    "adasap_step",
    "backward",
    "build_config",
    "build_model",
    "build_schedule",
    "compute_epsilon_hat",
    "export_pruned_model",
    "hessian_vector_product",
    "no_grad",
    "parse_config_file",
    "partition_view",
    "perturbation_gap",
    "prune_step",
    "reduce_model",
    "resolve_rho",
    "run_pipeline",
    "score_magnitude",
    "score_taylor",
    "sparsity_report",
    "top_hessian_eigenvalue",
]
