"""Total-variation restoration of images corrupted by multiplicative Gamma speckle."""

from .bench import BenchRow, SweepSpec, lambda_sweep, run_table
from .bregman import RestoreResult, SolverConfig, SolverError, TraceRow, restore, step
from .image_core import DualField, divergence, forward_diff, load_image, relative_error, save_image
from .newton_pixel import PixelProblem, solve_field, solve_pixel
from .noise_model import (
    LogObservation,
    SpeckleModel,
    apply_speckle,
    data_term,
    objective,
    sample_speckle,
    to_log,
)
from .tv import ChambolleConfig, denoise, tv

__version__ = "0.1.0"

__all__ = [
    "BenchRow",
    "ChambolleConfig",
    "DualField",
    "LogObservation",
    "PixelProblem",
    "RestoreResult",
    "SolverConfig",
    "SolverError",
    "SpeckleModel",
    "SweepSpec",
    "TraceRow",
    "apply_speckle",
    "data_term",
    "denoise",
    "divergence",
    "forward_diff",
    "lambda_sweep",
    "load_image",
    "objective",
    "relative_error",
    "restore",
    "run_table",
    "sample_speckle",
    "save_image",
    "solve_field",
    "solve_pixel",
    "step",
    "to_log",
    "tv",
]
