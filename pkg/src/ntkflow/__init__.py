"""Gradient-flow training with NTK spectral convergence certificates.

Simulates continuous gradient descent on networks built from polynomial
layers and piecewise-polynomial activations, tracks the NTK Gram matrix and
its smallest eigenvalue along the trajectory, and verifies the exponential
residual-decay envelope |y - F_t| <= e^{-lambda0 t} |y - F_0|.
"""

from .activations import (ActivationSpec, approximate_sigmoid, builtin,
                          sup_error)
from .certificates import (ConvergenceCertificate, certificate,
                           check_envelope, dynamics_residual_check,
                           render_certificate)
from .datasets import (Dataset, Graph, gen_synthetic, knn_graph,
                       load_dataset, save_dataset)
from .flow import (FlowConfig, TrajectoryLog, blowup_bound_check, integrate,
                   integrate_reverse, loss_monotonicity_check,
                   load_trajectory_csv, save_trajectory_csv)
from .networks import (LayerSpec, Network, build_network, dense_chain,
                       forward, gcn_chain, init_params, loss, loss_gradient,
                       param_jacobian, residual_chain)
from .spectral import (min_eigenvalue, ntk_gram, residual, stacked_jacobian,
                       stacked_outputs)

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec", "approximate_sigmoid", "builtin", "sup_error",
    "ConvergenceCertificate", "certificate", "check_envelope",
    "dynamics_residual_check", "render_certificate",
    "Dataset", "Graph", "gen_synthetic", "knn_graph", "load_dataset",
    "save_dataset",
    "FlowConfig", "TrajectoryLog", "blowup_bound_check", "integrate",
    "integrate_reverse", "loss_monotonicity_check", "load_trajectory_csv",
    "save_trajectory_csv",
    "LayerSpec", "Network", "build_network", "dense_chain", "forward",
    "gcn_chain", "init_params", "loss", "loss_gradient", "param_jacobian",
    "residual_chain",
    "min_eigenvalue", "ntk_gram", "residual", "stacked_jacobian",
    "stacked_outputs",
]
