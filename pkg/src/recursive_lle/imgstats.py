"""Colour, histogram, patch and Haar primitives on HxWx3 float images in [0, 1].

The numpy functions here back data preparation and the metrics. The ``*_t``
variants operate on batched torch tensors (B, C, H, W) and are what the
networks call during training; they agree with the numpy ones to rounding.
"""
from dataclasses import dataclass

import numpy as np
import torch

from . import kernels

BINS = 256


def _as_image(img):
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected HxWxC array, got shape {arr.shape}")
    return arr


def rgb_to_v(img):
    """HSV value channel, i.e. the per-pixel maximum over colour channels."""
    return kernels.v_channel(_as_image(img))


def mean_brightness(img):
    return float(rgb_to_v(img).mean())


def brightness_histogram(v):
    """256-bin histogram of a value channel, normalised to unit mass."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"expected HxW value channel, got shape {v.shape}")
    return kernels.histogram256(v)


def patch_means(img, patch=16):
    """Means of non-overlapping ``patch`` x ``patch`` tiles, row-major.

    Every channel contributes to a tile's mean; partial tiles at the right and
    bottom edges are averaged over the pixels they actually contain.
    """
    if patch < 1:
        raise ValueError("patch must be >= 1")
    return kernels.patch_means(_as_image(img), int(patch))


@dataclass(frozen=True)
class WaveletBands:
    low: np.ndarray   # (H/2, W/2, C): LL
    high: np.ndarray  # (H/2, W/2, 3C): LH, HL, HH stacked along channels
    shape: tuple      # spatial shape of the source before padding


def pad_even(img):
    """Edge-replicate one row/column where a dimension is odd."""
    h, w = img.shape[:2]
    ph, pw = h % 2, w % 2
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return img


def haar_decompose(img):
    """Single-level 2D Haar split with the averaging (divide-by-4) convention."""
    x = _as_image(img)
    h, w = x.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"Haar decomposition needs H, W >= 2, got {h}x{w}")
    x = np.ascontiguousarray(pad_even(x))
    ll, lh, hl, hh = kernels.haar_decompose(x)
    return WaveletBands(low=ll, high=np.concatenate([lh, hl, hh], axis=2), shape=(h, w))


def haar_reconstruct(bands):
    c = bands.low.shape[2]
    hi = bands.high
    out = kernels.haar_reconstruct(
        np.ascontiguousarray(bands.low),
        np.ascontiguousarray(hi[:, :, :c]),
        np.ascontiguousarray(hi[:, :, c:2 * c]),
        np.ascontiguousarray(hi[:, :, 2 * c:]),
    )
    h, w = bands.shape
    return out[:h, :w]


# torch versions, batched (B, C, H, W)

def v_channel_t(x):
    return x.amax(dim=1)


def mean_brightness_t(x):
    """Per-image mean of the value channel, shape (B,)."""
    return x.amax(dim=1).mean(dim=(1, 2))


def histogram_t(v):
    """Per-image normalised 256-bin histograms of (B, H, W) values -> (B, 256)."""
    b = v.shape[0]
    idx = torch.clamp(torch.floor(v.detach().reshape(b, -1) * BINS), 0, BINS - 1).long()
    counts = torch.zeros(b, BINS, dtype=v.dtype, device=v.device)
    counts.scatter_add_(1, idx, torch.ones_like(idx, dtype=v.dtype))
    return counts / idx.shape[1]


def haar_decompose_t(x):
    """Returns (LL, high) with high = cat(LH, HL, HH) along channels."""
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        x = torch.nn.functional.pad(x, (0, x.shape[-1] % 2, 0, x.shape[-2] % 2), mode="replicate")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 4
    lh = (a - b + c - d) / 4
    hl = (a + b - c - d) / 4
    hh = (a - b - c + d) / 4
    return ll, torch.cat([lh, hl, hh], dim=1)
