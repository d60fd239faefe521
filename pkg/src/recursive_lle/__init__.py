"""Brightness-perceiving recursive low-light image enhancement."""
from .actnet import ACTNet
from .bpnet import BPNet, RecursionBounds
from .kernels import BACKEND
from .recursion import correction_step, enhance_recursive, generate_pseudo_label

__all__ = ["ACTNet", "BPNet", "RecursionBounds", "BACKEND", "correction_step", "enhance_recursive",
           "generate_pseudo_label"]
__version__ = "0.1.0"
