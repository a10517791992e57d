"""pinnstab: physics-informed neural networks on a small tape autodiff core.

Three MLP families share one training stack: plain tanh layers, simple
highway layers ``tanh(h) + h`` and squared-residual layers ``tanh(h) + h*h``.
"""
from . import _backend
from .autodiff import Tape, Var
from .network import ALL_ARCHS, Arch, MLPParams, NetConfig, init_glorot, load_params, predict, save_params
from .optim import AdamConfig, LBFGSConfig, adam_minimize, lbfgs_minimize
from .pinn import LossWeights, assemble_loss, rel_l2_error, sample_points
from .problems import PROBLEM_IDS, build_problem
from .harness import RunConfig, classify_status, gradient_histogram, run_single, sweep

__version__ = "0.1.0"


def kernel_backend():
    """Name of the active elementwise kernel backend ("cython" or "python")."""
    return _backend.name


__all__ = [
    "ALL_ARCHS", "AdamConfig", "Arch", "LBFGSConfig", "LossWeights", "MLPParams", "NetConfig",
    "PROBLEM_IDS", "RunConfig", "Tape", "Var", "adam_minimize", "assemble_loss", "build_problem",
    "classify_status", "gradient_histogram", "init_glorot", "kernel_backend", "lbfgs_minimize",
    "load_params", "predict", "rel_l2_error", "run_single", "sample_points", "save_params", "sweep",
]
