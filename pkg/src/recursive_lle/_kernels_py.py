"""Pure numpy implementations of the pixel kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are checked against. All inputs are
C-contiguous float64 arrays; validation happens in the callers.
"""
import numpy as np


def v_channel(img):
    return img.max(axis=2)


def histogram256(v):
    idx = np.minimum(np.floor(v.ravel() * 256.0), 255).astype(np.int64)
    idx = np.clip(idx, 0, 255)
    counts = np.bincount(idx, minlength=256).astype(np.float64)
    return counts / v.size


def patch_means(plane, patch):
    # plane: H x W x C; tiles row-major, partial edge tiles use their own count
    h, w = plane.shape[:2]
    out = []
    for i in range(0, h, patch):
        for j in range(0, w, patch):
            out.append(plane[i:i + patch, j:j + patch].mean())
    return np.asarray(out, dtype=np.float64)


def haar_decompose(x):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 4.0
    lh = (a - b + c - d) / 4.0
    hl = (a + b - c - d) / 4.0
    hh = (a - b - c + d) / 4.0
    return ll, lh, hl, hh


def haar_reconstruct(ll, lh, hl, hh):
    h, w = ll.shape[:2]
    out = np.empty((2 * h, 2 * w) + ll.shape[2:], dtype=np.float64)
    out[0::2, 0::2] = ll + lh + hl + hh
    out[0::2, 1::2] = ll - lh + hl - hh
    out[1::2, 0::2] = ll + lh - hl - hh
    out[1::2, 1::2] = ll - lh - hl + hh
    return out


def eme_blocks(v, block, eps):
    h, w = v.shape
    vals = []
    for i in range(0, h, block):
        for j in range(0, w, block):
            tile = v[i:i + block, j:j + block]
            vals.append(20.0 * np.log10((tile.max() + eps) / (tile.min() + eps)))
    return float(np.mean(vals))


def loe_mean_rd(a, b, chunk=512):
    """Mean over p of the number of q whose order relative to p flips."""
    a = a.ravel()
    b = b.ravel()
    total = 0
    for s in range(0, a.size, chunk):
        ua = a[s:s + chunk, None] >= a[None, :]
        ub = b[s:s + chunk, None] >= b[None, :]
        total += int(np.count_nonzero(ua ^ ub))
    return total / a.size
