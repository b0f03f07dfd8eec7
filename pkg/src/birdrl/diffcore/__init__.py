"""Reverse-mode autodiff, optimizer and gradient utilities."""

from . import graph as ops
from .check import finite_difference_check
from .graph import GraphError, Node, ShapeError, constant, grad, parameter
from .optim import DivergenceError, OptimizerState, adam_step, clip_gradient_norm, global_norm
from .rng import Streams

__all__ = [
    "ops", "Node", "ShapeError", "GraphError", "constant", "parameter", "grad",
    "finite_difference_check", "DivergenceError", "OptimizerState", "adam_step",
    "clip_gradient_norm", "global_norm", "Streams",
]
