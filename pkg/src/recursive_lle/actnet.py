"""Adaptive contrast and texture enhancement network.

A small UNet predicts a per-pixel, per-channel curve map in [0, 1]. Each of the
two decoder stages ends in an adaptive adjustment module (AAM) that blends a
central-difference convolution with a vanilla one under a spatial coefficient
``theta`` and then applies a per-channel affine modulation ``alpha, beta``::

    AAM(f) = ReLU(theta * CDC(f) + (1 - theta) * Conv(f)) * alpha + beta

``theta`` comes from a gradient branch fed with the Haar high-frequency bands of
the input; ``alpha`` and ``beta`` come from a brightness branch fed with the
histogram of the Haar low-frequency band.

Layout (B, C, H, W) throughout; H and W must be multiples of 4 and at least 8.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imgstats import BINS, haar_decompose_t, histogram_t, v_channel_t

STEM = 32
MID = 64
DEEP = 128
BRIGHTNESS_HIDDEN = (256, 128, 64, 32)
GRADIENT_HIDDEN = 16


def cdc_conv(f, weight):
    """Central difference convolution, bias-free, stride 1, 3x3.

    ``out(p0) = sum_n w(pn) * (f(p0 + pn) - f(p0))``. Borders are
    edge-replicated so that the operator vanishes on constant input everywhere.
    """
    padded = F.pad(f, (1, 1, 1, 1), mode="replicate")
    out = F.conv2d(padded, weight)
    centre = F.conv2d(f, weight.sum(dim=(2, 3), keepdim=True))
    return out - centre


def aam_forward(f, theta, alpha, beta, cdc_weight, conv_weight, conv_bias=None):
    """Functional AAM. ``theta`` (B,1,h,w); ``alpha``, ``beta`` (B,C)."""
    mixed = theta * cdc_conv(f, cdc_weight) + (1 - theta) * F.conv2d(f, conv_weight, conv_bias, padding=1)
    return F.relu(mixed) * alpha[:, :, None, None] + beta[:, :, None, None]


class AAM(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.cdc_weight = nn.Parameter(torch.empty(channels, channels, 3, 3))
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.kaiming_uniform_(self.cdc_weight, a=5 ** 0.5)

    def forward(self, f, theta, alpha, beta):
        return aam_forward(f, theta, alpha, beta, self.cdc_weight, self.conv.weight, self.conv.bias)


class BrightnessBranch(nn.Module):
    """Four FC-ReLU layers on a 256-bin histogram, then linear (alpha, beta) heads per AAM.

    Heads start at zero weight with alpha bias 1 and beta bias 0, so a fresh
    network applies the identity modulation.
    """

    def __init__(self, stage_channels=(MID, STEM)):
        super().__init__()
        layers = []
        width = BINS
        for hidden in BRIGHTNESS_HIDDEN:
            layers += [nn.Linear(width, hidden), nn.ReLU()]
            width = hidden
        self.trunk = nn.Sequential(*layers)
        self.alpha_heads = nn.ModuleList(nn.Linear(width, c) for c in stage_channels)
        self.beta_heads = nn.ModuleList(nn.Linear(width, c) for c in stage_channels)
        for head in self.alpha_heads:
            nn.init.zeros_(head.weight)
            nn.init.ones_(head.bias)
        for head in self.beta_heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, hist):
        # scale so a uniform histogram is all ones
        z = self.trunk(hist * BINS)
        return [(a(z), b(z)) for a, b in zip(self.alpha_heads, self.beta_heads)]


class GradientBranch(nn.Module):
    """Three 3x3 convolutions on the 9-channel high band, squashed to a 1-channel theta."""

    def __init__(self, in_channels=9, hidden=GRADIENT_HIDDEN):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )

    def forward(self, high, sizes):
        theta = torch.sigmoid(self.body(high))
        out = []
        for size in sizes:
            if tuple(theta.shape[-2:]) == tuple(size):
                out.append(theta)
            else:
                out.append(F.interpolate(theta, size=size, mode="bilinear", align_corners=False))
        return out


def _conv_relu(cin, cout, k, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2), nn.ReLU())


class ACTNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(_conv_relu(3, STEM, 1), _conv_relu(STEM, STEM, 3))
        self.down1 = _conv_relu(STEM, MID, 3, stride=2)
        self.down2 = _conv_relu(MID, DEEP, 3, stride=2)
        self.reduce1 = nn.Conv2d(DEEP, MID, 1)
        self.reduce2 = nn.Conv2d(MID, STEM, 1)
        self.aam1 = AAM(MID)
        self.aam2 = AAM(STEM)
        self.head = nn.Conv2d(STEM, 3, 3, padding=1)
        self.brightness = BrightnessBranch((MID, STEM))
        self.gradient = GradientBranch()

    def adjustment_params(self, x):
        """Per-AAM (theta, alpha, beta) for input ``x``."""
        low, high = haar_decompose_t(x)
        hist = histogram_t(v_channel_t(low))
        h, w = x.shape[-2:]
        thetas = self.gradient(high, [(h // 2, w // 2), (h, w)])
        affine = self.brightness(hist)
        return [(t, a, b) for t, (a, b) in zip(thetas, affine)]

    def forward(self, x):
        h, w = x.shape[-2:]
        if h < 8 or w < 8:
            raise ValueError(f"ACT-Net input must be at least 8x8, got {h}x{w}")
        if h % 4 or w % 4:
            raise ValueError(f"ACT-Net input dims must be multiples of 4, got {h}x{w}")
        (t1, a1, b1), (t2, a2, b2) = self.adjustment_params(x)
        s1 = self.stem(x)
        s2 = self.down1(s1)
        s3 = self.down2(s2)
        u = F.interpolate(s3, scale_factor=2, mode="bilinear", align_corners=False)
        u = self.aam1(self.reduce1(u) + s2, t1, a1, b1)
        u = F.interpolate(u, scale_factor=2, mode="bilinear", align_corners=False)
        u = self.aam2(self.reduce2(u) + s1, t2, a2, b2)
        return torch.sigmoid(self.head(u))


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())
