"""Full-reference (PSNR, SSIM) and no-reference (EME, LOE) quality metrics.

Images are HxWx3 float arrays in [0, 1]. ``psnr`` of identical images is the
sentinel ``PSNR_IDENTICAL`` (positive infinity); reports serialise it as the
string ``"inf"``.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .imgstats import _as_image, rgb_to_v

PSNR_IDENTICAL = math.inf
EME_BLOCK = 16
EME_EPS = 1e-4
LOE_MAX_SIDE = 100
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

METRICS = ("psnr", "ssim", "eme", "loe")
UNAVAILABLE = {
    "niqe": "NIQE needs an external pretrained natural-scene model and is not bundled",
    "lpips": "LPIPS needs external pretrained network weights and is not bundled",
}


class MetricError(ValueError):
    pass


def _pair(a, b):
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window():
    r = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return g


def _filter_valid(x, g):
    # separable 'valid' correlation with the 1-D window along both axes
    x = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(x, g.size, axis=1) @ g


def ssim(a, b):
    """Mean SSIM on the RGB-mean luma, 11x11 Gaussian window (sigma 1.5), valid region."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise MetricError(f"SSIM needs both sides >= {SSIM_WIN}, got {a.shape[:2]}")
    x = a.mean(axis=2)
    y = b.mean(axis=2)
    g = _gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def eme(img, block=EME_BLOCK, eps=EME_EPS):
    """Mean over 16x16 blocks of the V channel of 20*log10((max + eps) / (min + eps))."""
    v = np.ascontiguousarray(rgb_to_v(img))
    return float(kernels.eme_blocks(v, int(block), float(eps)))


def _loe_grid(v):
    h, w = v.shape
    sh = math.ceil(h / LOE_MAX_SIDE)
    sw = math.ceil(w / LOE_MAX_SIDE)
    return np.ascontiguousarray(v[::sh, ::sw])


def loe(orig, enh):
    """Lightness-order error between an image and its enhancement.

    Lightness is the channel maximum, strided down to at most 100x100. For each
    pixel p the relative-order flips against every q are counted; the result is
    the mean count over p.
    """
    orig, enh = _pair(orig, enh)
    a = _loe_grid(rgb_to_v(orig))
    b = _loe_grid(rgb_to_v(enh))
    return float(kernels.loe_mean_rd(a, b))


_REFERENCE = {"psnr": psnr, "ssim": ssim}


def metric_value(name, orig, enh, ref=None):
    """Evaluate one metric. ``ref`` is the reference for PSNR/SSIM."""
    if name in _REFERENCE:
        if ref is None:
            raise MetricError(f"{name} needs a reference image")
        return _REFERENCE[name](enh, ref)
    if name == "eme":
        return eme(enh)
    if name == "loe":
        return loe(orig, enh)
    raise MetricError(f"unknown metric {name!r}")


def check_metric_names(names):
    for n in names:
        if n in UNAVAILABLE:
            raise MetricError(f"{n}: {UNAVAILABLE[n]}")
        if n not in METRICS:
            raise MetricError(f"unknown metric {n!r}; choose from {', '.join(METRICS)}")


@dataclass
class MetricReport:
    metrics: list
    names: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # one dict metric -> value per pair

    @property
    def count(self):
        return len(self.rows)

    @property
    def aggregate(self):
        return {m: float(np.mean([r[m] for r in self.rows])) for m in self.metrics}

    def to_table(self):
        head = "name\t" + "\t".join(self.metrics)
        lines = [head]
        for name, row in zip(self.names, self.rows):
            lines.append(name + "\t" + "\t".join(_fmt(row[m]) for m in self.metrics))
        agg = self.aggregate
        lines.append("MEAN\t" + "\t".join(_fmt(agg[m]) for m in self.metrics))
        return "\n".join(lines) + "\n"

    def to_summary(self):
        agg = self.aggregate
        return {
            "count": self.count,
            "metrics": {m: _json_num(agg[m]) for m in self.metrics},
            "unavailable": sorted(UNAVAILABLE),
            "per_image": [
                {"name": n, **{m: _json_num(r[m]) for m in self.metrics}}
                for n, r in zip(self.names, self.rows)
            ],
        }

    def write(self, path):
        path = Path(path)
        path.write_text(self.to_table(), encoding="utf-8")
        summary = path.with_suffix(".json")
        summary.write_text(json.dumps(self.to_summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path, summary


def _fmt(x):
    return "inf" if math.isinf(x) else f"{x:.6f}"


def _json_num(x):
    return "inf" if math.isinf(x) else x


def evaluate_pairset(pairs, metrics=("psnr", "ssim")):
    """Evaluate ``metrics`` on each item of ``pairs``.

    Each item is ``(name, orig, enh, ref)``: ``orig`` is the low-light input used
    by LOE, ``enh`` the enhanced image, ``ref`` the reference for PSNR/SSIM
    (may be None when only no-reference metrics are requested).
    """
    metrics = list(metrics)
    check_metric_names(metrics)
    pairs = list(pairs)
    if not pairs:
        raise MetricError("empty pair list")
    report = MetricReport(metrics)
    for name, orig, enh, ref in pairs:
        report.names.append(name)
        report.rows.append({m: metric_value(m, orig, enh, ref) for m in metrics})
    return report
