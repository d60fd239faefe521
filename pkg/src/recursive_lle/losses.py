"""Unsupervised enhancement losses on batched tensors (B, 3, H, W).

Every loss averages over the batch.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    w_exp: float = 1.0
    w_col: float = 0.5
    w_tv: float = 200.0
    w_p: float = 0.001

    def __post_init__(self):
        if min(self.w_exp, self.w_col, self.w_tv, self.w_p) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class ExposureTarget:
    level: float = 0.6
    patch: int = 16
    channel: str = "rgb_mean"  # or "v"

    def __post_init__(self):
        if not 0 < self.level <= 1:
            raise ValueError("exposure level must be in (0, 1]")
        if self.patch < 1:
            raise ValueError("patch must be >= 1")
        if self.channel not in ("rgb_mean", "v"):
            raise ValueError(f"unknown exposure channel {self.channel!r}")


def patch_means_t(plane, patch):
    """Non-overlapping tile means of (B, 1, H, W); edge tiles use their own pixel count."""
    h, w = plane.shape[-2:]
    ph, pw = -h % patch, -w % patch
    sums = F.avg_pool2d(F.pad(plane, (0, pw, 0, ph)), patch, divisor_override=1)
    if ph or pw:
        ones = torch.ones((1, 1, h, w), dtype=plane.dtype, device=plane.device)
        counts = F.avg_pool2d(F.pad(ones, (0, pw, 0, ph)), patch, divisor_override=1)
    else:
        counts = patch * patch
    return (sums / counts).flatten(1)


def exposure_loss(enh, target=ExposureTarget()):
    if target.channel == "v":
        plane = enh.amax(dim=1, keepdim=True)
    else:
        plane = enh.mean(dim=1, keepdim=True)
    means = patch_means_t(plane, target.patch)
    return (means - target.level).abs().mean()


def color_constancy_loss(enh):
    j = enh.mean(dim=(2, 3))
    r, g, b = j[:, 0], j[:, 1], j[:, 2]
    return ((r - g) ** 2 + (r - b) ** 2 + (g - b) ** 2).mean()


def _map_smoothness(m):
    # forward differences, last difference column/row replicated to full size
    dx = m[..., :, 1:] - m[..., :, :-1]
    dy = m[..., 1:, :] - m[..., :-1, :]
    dx = torch.cat([dx, dx[..., :, -1:]], dim=-1)
    dy = torch.cat([dy, dy[..., -1:, :]], dim=-2)
    per_pixel = (dx.abs() + dy.abs()) ** 2
    return per_pixel.mean(dim=(2, 3)).sum(dim=1).mean()


def smoothness_loss(maps):
    """Mean over the sequence of curve maps of the per-map smoothness penalty."""
    if isinstance(maps, torch.Tensor):
        maps = [maps]
    if len(maps) == 0:
        raise ValueError("smoothness_loss needs at least one map")
    return sum(_map_smoothness(m) for m in maps) / len(maps)


def total_loss(l_exp, l_col, l_tv, l_p, weights=LossWeights()):
    return weights.w_exp * l_exp + weights.w_col * l_col + weights.w_tv * l_tv + weights.w_p * l_p
