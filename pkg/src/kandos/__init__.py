"""Lightweight Kolmogorov-Arnold network for DoS detection on network-flow features."""

from kandos.errors import KandosError
from kandos.splines import SplineGrid, basis_eval, basis_eval_deriv, make_grid, spline_eval
from kandos.model import KanConfig, KanModel, count_params, forward, init_model, load_model, predict_proba, save_model

__version__ = "0.1.0"

__all__ = [
    "KandosError",
    "KanConfig",
    "KanModel",
    "SplineGrid",
    "basis_eval",
    "basis_eval_deriv",
    "count_params",
    "forward",
    "init_model",
    "load_model",
    "make_grid",
    "predict_proba",
    "save_model",
    "spline_eval",
]
