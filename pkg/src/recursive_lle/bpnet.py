"""Brightness perception network: V-channel histogram -> recursion count."""
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .imgstats import BINS


@dataclass(frozen=True)
class RecursionBounds:
    rho_min: int = 1
    rho_max: int = 10

    def __post_init__(self):
        if not (1 <= self.rho_min <= self.rho_max):
            raise ValueError(f"need 1 <= rho_min <= rho_max, got {self.rho_min}, {self.rho_max}")


def round_half_up(value):
    """Round to the nearest integer, ties to the larger count."""
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class RecursiveFactor:
    value: float
    rounded: int


def factor_from_unit(s, bounds):
    """Map a unit-interval score to the recursion range (works on floats and tensors)."""
    return bounds.rho_min + s * (bounds.rho_max - bounds.rho_min)


def to_factor(value, bounds):
    n = round_half_up(float(value))
    return RecursiveFactor(float(value), min(max(n, bounds.rho_min), bounds.rho_max))


class BPNet(nn.Module):
    """256 -> 128 -> 64 -> 1 with ReLU between layers and a sigmoid on the output.

    ``forward`` returns the continuous factor in [rho_min, rho_max], one per
    histogram row.
    """

    def __init__(self, bounds=None):
        super().__init__()
        self.bounds = bounds or RecursionBounds()
        self.layers = nn.Sequential(
            nn.Linear(BINS, 128),
            nn.ReLU(),
            nn.Linear(128, 64),
            nn.ReLU(),
            nn.Linear(64, 1),
        )

    def forward(self, hist):
        s = torch.sigmoid(self.layers(hist * BINS)).squeeze(-1)
        return factor_from_unit(s, self.bounds)

    @torch.no_grad()
    def predict(self, hist):
        """Factors for a (B, 256) or (256,) histogram batch."""
        hist = torch.as_tensor(hist, dtype=next(self.parameters()).dtype)
        values = self(hist.reshape(-1, BINS))
        return [to_factor(v, self.bounds) for v in values.tolist()]


def perception_loss(value, label):
    """L1 distance between the continuous factor and the pseudo-label."""
    if isinstance(value, torch.Tensor):
        label = torch.as_tensor(label, dtype=value.dtype, device=value.device)
        return (value - label).abs().mean()
    return abs(float(value) - float(label))
