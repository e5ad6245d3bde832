"""
Minimal reverse-mode automatic differentiation
"""

from .tensor import GradientMap, Node, Tape, Tensor, backward
from . import ops

__all__ = ["GradientMap", "Node", "Tape", "Tensor", "backward", "ops"]
