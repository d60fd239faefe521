"""Dataset scanning, brightness-level bucketing, manifests and synthetic darkening.

Manifest format (UTF-8 text, one record per line, tab separated)::

    # recursive-lle manifest v1
    <path>\t<mean brightness, repr float>\t<level 1-4>\t<train|test>

Lines starting with ``#`` are comments. Records are kept sorted by path.
"""
import enum
import functools
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .imgstats import mean_brightness

log = logging.getLogger(__name__)

MANIFEST_HEADER = "# recursive-lle manifest v1"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
MAX_MEAN = 0.6


class DatasetError(Exception):
    pass


class Level(enum.IntEnum):
    LEVEL_1 = 1
    LEVEL_2 = 2
    LEVEL_3 = 3
    LEVEL_4 = 4

    @property
    def range(self):
        """(low, high); low inclusive, high exclusive except for Level_4."""
        return _RANGES[self]

    def __str__(self):
        return f"Level_{self.value}"


_RANGES = {
    Level.LEVEL_1: (0.0, 0.15),
    Level.LEVEL_2: (0.15, 0.3),
    Level.LEVEL_3: (0.3, 0.45),
    Level.LEVEL_4: (0.45, 0.6),
}


def bucket_for(mean):
    """Level for a mean brightness, or None when it lies outside [0, 0.6]."""
    if mean < 0 or mean > MAX_MEAN:
        return None
    for level in (Level.LEVEL_4, Level.LEVEL_3, Level.LEVEL_2):
        if mean >= level.range[0]:
            return level
    return Level.LEVEL_1


def in_level(mean, level):
    lo, hi = level.range
    return lo <= mean <= hi if level is Level.LEVEL_4 else lo <= mean < hi


def read_image(path):
    """Decode an 8- or 16-bit image to float64 RGB in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"cannot decode image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DatasetError(f"unsupported pixel type {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    else:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw.astype(np.float64) / scale


def write_image(path, img):
    """Write an RGB float image in [0, 1] as 8-bit (PNG for .png paths)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    out = np.rint(arr * 255.0).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(out, cv2.COLOR_RGB2BGR)):
        raise DatasetError(f"cannot write image {path}")


@functools.lru_cache(maxsize=512)
def _cached(path):
    img = read_image(path)
    img.setflags(write=False)
    return img


@dataclass(frozen=True)
class SampleRecord:
    path: str
    mean_brightness: float
    level: Level
    split: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if not in_level(self.mean_brightness, self.level):
            raise ValueError(f"mean {self.mean_brightness} outside {self.level}")


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)

    def counts(self, split=None):
        out = {lvl: 0 for lvl in Level}
        for r in self.records:
            if split is None or r.split == split:
                out[r.level] += 1
        return out

    def select(self, levels=None, split=None):
        levels = set(Level) if levels is None else {Level(lv) for lv in levels}
        return [r for r in self.records if r.level in levels and (split is None or r.split == split)]

    def write(self, path):
        lines = [MANIFEST_HEADER]
        for r in sorted(self.records, key=lambda r: r.path):
            lines.append(f"{r.path}\t{r.mean_brightness!r}\t{int(r.level)}\t{r.split}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"manifest not found: {path}")
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                records.append(SampleRecord(parts[0], float(parts[1]), Level(int(parts[2])), parts[3]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        return cls(records)


def split_for(path, split_fraction, seed=0):
    digest = hashlib.sha256(f"{seed}:{path}".encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    return "test" if u < split_fraction else "train"


def scan_and_bucket(directory, split_fraction=0.1, seed=0):
    """Bucket every decodable image under ``directory`` by mean V brightness.

    Images brighter than 0.6 and files that fail to decode are skipped with a
    warning. The split is a seeded hash of the file name, so it is stable under
    re-scans and independent of the other files present.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DatasetError(f"no images found in {directory}")
    records = []
    for p in files:
        try:
            img = read_image(p)
        except DatasetError as exc:
            log.warning("skipping %s: %s", p, exc)
            continue
        mean = mean_brightness(img)
        level = bucket_for(mean)
        if level is None:
            log.warning("rejecting %s: mean brightness %.4f above %.2f", p, mean, MAX_MEAN)
            continue
        rel = p.relative_to(directory).as_posix()
        records.append(SampleRecord(str(p), mean, level, split_for(rel, split_fraction, seed)))
    if not records:
        raise DatasetError(f"no usable images in {directory}")
    return DatasetManifest(records)


def crop_or_pad(img, patch, rng):
    """Random ``patch`` crop where the image is larger; edge-pad to a multiple of 4."""
    h, w = img.shape[:2]
    if h > patch:
        i = int(rng.integers(0, h - patch + 1))
        img = img[i:i + patch]
    if w > patch:
        j = int(rng.integers(0, w - patch + 1))
        img = img[:, j:j + patch]
    h, w = img.shape[:2]
    ph, pw = -h % 4, -w % 4
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return img


def sample_batch(manifest, levels, batch, patch, rng, split="train"):
    """Uniformly sample ``batch`` records from ``levels`` and return (images, records).

    ``images`` is an array (B, h, w, 3) when all crops agree in size, else a list.
    """
    pool = manifest.select(levels, split)
    if not pool:
        names = ", ".join(str(Level(lv)) for lv in levels)
        raise DatasetError(f"no {split} records for {names}")
    picks = rng.integers(0, len(pool), size=batch)
    records = [pool[k] for k in picks]
    images = [crop_or_pad(_cached(r.path), patch, rng) for r in records]
    if len({im.shape for im in images}) == 1:
        images = np.stack(images)
    return images, records


def synthetic_darken(base, level, gamma=1.0, tol_iter=60):
    """Darken ``base`` by ``gain * base**gamma`` into the brightness range of ``level``.

    The gain is bisected towards the midpoint of the range and the search stops
    as soon as the mean brightness lands inside it.
    """
    level = Level(level)
    base = np.clip(np.asarray(base, dtype=np.float64), 0.0, 1.0)
    lo, hi = level.range
    shaped = base ** gamma
    if mean_brightness(base) <= hi or mean_brightness(shaped) < lo:
        raise DatasetError(f"base too dark to reach {level}")
    target = 0.5 * (lo + hi)
    g_lo, g_hi = 0.0, 1.0
    out = shaped
    for _ in range(tol_iter):
        g = 0.5 * (g_lo + g_hi)
        out = np.clip(g * shaped, 0.0, 1.0)
        mean = mean_brightness(out)
        if in_level(mean, level) and abs(mean - target) < 0.25 * (hi - lo):
            break
        if mean < target:
            g_lo = g
        else:
            g_hi = g
    return out


def synthetic_bases(n, size=64, seed=0, min_mean=0.65):
    """Procedural well-exposed RGB images: smooth gradients, waves and a few shapes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    out = []
    while len(out) < n:
        img = np.empty((size, size, 3))
        tint = rng.uniform(0.85, 1.0, size=3)
        angle = rng.uniform(0, 2 * np.pi)
        ramp = 0.5 + 0.5 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))
        freq = rng.uniform(2, 8, size=2)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy) + rng.uniform(0, 2 * np.pi))
        lum = 0.55 + 0.25 * ramp + 0.15 * wave
        for _ in range(int(rng.integers(1, 4))):
            cy, cx, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.25)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            lum = np.where(mask, lum * rng.uniform(0.7, 1.15), lum)
        for c in range(3):
            img[:, :, c] = lum * tint[c]
        img = np.clip(img, 0.0, 1.0)
        if mean_brightness(img) >= min_mean:
            out.append(img)
    return out


SYNTH_GAMMA = {Level.LEVEL_1: 1.3, Level.LEVEL_2: 1.2, Level.LEVEL_3: 1.1, Level.LEVEL_4: 1.0}


def write_synthetic_levels(bases, out_dir, names=None):
    """Write every base darkened into each of the four levels; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = names or [f"base{k:03d}" for k in range(len(bases))]
    paths = []
    for name, base in zip(names, bases):
        for level in Level:
            p = out_dir / f"{name}_L{int(level)}.png"
            write_image(p, synthetic_darken(base, level, SYNTH_GAMMA[level]))
            paths.append(p)
    return paths
