"""Rank-4 tensors, compute kernels, and tape-based reverse-mode autodiff."""

from .gradcheck import GradCheckReport, finite_diff_check, standard_op_checks
from .tape import Eager, Gradients, Node, Tape, TapeNode, backward
from .tensor import ShapeError, Tensor

__all__ = [
    "Eager",
    "GradCheckReport",
    "Gradients",
    "Node",
    "ShapeError",
    "Tape",
    "TapeNode",
    "Tensor",
    "backward",
    "finite_diff_check",
    "standard_op_checks",
]
