"""Brightness correction step, recursive enhancement, and pseudo-label generation.

An enhancer is any callable mapping a (B, 3, H, W) tensor in [0, 1] to a curve
map of the same shape; ``ACTNet`` instances qualify, as do test stubs.
"""
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .imgstats import mean_brightness_t

DEFAULT_CAP = 10


def correction_step(e, m):
    """``e + m * e * (1 - e)``; stays in [0, 1] for e, m in [0, 1]."""
    return e + m * e * (1 - e)


def correction_step_grad(e, m):
    """Partial derivatives of ``correction_step`` w.r.t. ``e`` and ``m``."""
    return 1 + m * (1 - 2 * e), e * (1 - e)


def _pad4(x):
    h, w = x.shape[-2:]
    ph = max(-h % 4, 8 - h)
    pw = max(-w % 4, 8 - w)
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x


def curve_map(enhancer, e):
    """Run ``enhancer`` on ``e`` padded to a multiple of 4, cropped back."""
    h, w = e.shape[-2:]
    return enhancer(_pad4(e))[..., :h, :w]


@dataclass
class EnhancementTrace:
    images: list = field(default_factory=list)  # E_0 .. E_N
    maps: list = field(default_factory=list)    # m_1 .. m_N

    @property
    def iterations(self):
        return len(self.maps)

    @property
    def final(self):
        return self.images[-1]


def enhance_recursive(x, enhancer, n, cap=DEFAULT_CAP):
    """Apply ``n`` correction steps, recomputing the curve map from each E_{n-1}."""
    if not 1 <= n <= cap:
        raise ValueError(f"iteration count must be in [1, {cap}], got {n}")
    trace = EnhancementTrace(images=[x])
    e = x
    for _ in range(n):
        m = curve_map(enhancer, e)
        e = correction_step(e, m)
        trace.maps.append(m)
        trace.images.append(e)
    return trace


@torch.no_grad()
def pseudo_labels(x, enhancer, threshold=0.6, cap=DEFAULT_CAP):
    """Iteration counts needed for each image of a batch to reach ``threshold``.

    Images are enhanced while their mean V-channel brightness is below the
    threshold, never more than ``cap`` times. Images already at or above the
    threshold get 1.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    counts = [0] * x.shape[0]
    active = list(range(x.shape[0]))
    e = x
    while active:
        means = mean_brightness_t(e).tolist()
        keep = [k for k, i in enumerate(active) if means[k] < threshold and counts[i] < cap]
        if not keep:
            break
        active = [active[k] for k in keep]
        e = e[keep]
        e = correction_step(e, curve_map(enhancer, e))
        for i in active:
            counts[i] += 1
    return [max(c, 1) for c in counts]


def generate_pseudo_label(x, enhancer, threshold=0.6, cap=DEFAULT_CAP):
    """Single-image form of ``pseudo_labels``; ``x`` is (3, H, W) or (1, 3, H, W)."""
    if x.dim() == 3:
        x = x.unsqueeze(0)
    return pseudo_labels(x, enhancer, threshold, cap)[0]
