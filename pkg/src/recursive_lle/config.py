"""Flat ``key = value`` configuration files and CLI option resolution.

Every command-line option has a config key of the same name with dashes
replaced by underscores. Values resolve as: flag, then config file, then the
built-in default. The config file comes from ``--config`` or, failing that,
the ``LLE_CONFIG`` environment variable.

Example::

    # desk-scale run
    learning_rate = 0.0001
    patch_size = 64
    metrics = psnr,ssim
"""
import os
from dataclasses import fields
from pathlib import Path

from .training import TrainingConfig

ENV_VAR = "LLE_CONFIG"


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# key -> (type, default) for options beyond the training hyperparameters
EXTRA_KEYS = {
    "input_dir": (str, None),
    "manifest_out": (str, None),
    "synthetic_from": (str, None),
    "procedural": (int, 0),
    "split_fraction": (float, 0.1),
    "manifest": (str, None),
    "out": (str, None),
    "checkpoint": (str, None),
    "resume": (_parse_bool, False),
    "input": (str, None),
    "output": (str, None),
    "trace_dir": (str, None),
    "force_n": (int, None),
    "pairs": (str, None),
    "metrics": (str, "psnr,ssim"),
    "report_out": (str, None),
    "deterministic": (_parse_bool, True),
}

TRAINING_KEYS = {f.name: (f.type, f.default) for f in fields(TrainingConfig)}
ALL_KEYS = {**TRAINING_KEYS, **EXTRA_KEYS}


def parse_config_text(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        kind = ALL_KEYS[key][0]
        try:
            out[key] = kind(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def load_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def config_path(flag_value):
    return flag_value or os.environ.get(ENV_VAR) or None


def resolve(args, file_values, keys):
    """Resolve ``keys`` from argparse ``args`` (None = unset), file values, defaults."""
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            out[key] = file_values[key]
        else:
            out[key] = ALL_KEYS[key][1]
    return out


def training_config(resolved):
    return TrainingConfig(**{k: resolved[k] for k in TRAINING_KEYS})
