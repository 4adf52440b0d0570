"""Knowledge-distilled nonlinear gradient preconditioning for PnP-FISTA."""

from . import analysis, data, distill, forward_models, persistence, preconditioners, solver
from .tensor import Parameter, Tensor, backward, no_grad

__all__ = [
    "analysis", "data", "distill", "forward_models", "persistence",
    "preconditioners", "solver", "Parameter", "Tensor", "backward", "no_grad",
]
