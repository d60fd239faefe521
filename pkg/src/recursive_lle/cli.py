"""Command-line interface: ``prepare``, ``train``, ``enhance``, ``evaluate``.

Exit codes: 0 success, 2 input error, 3 stage/contract violation,
4 numerical failure.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .data import DatasetError, DatasetManifest, Level, read_image, scan_and_bucket, synthetic_bases, \
    write_image, write_synthetic_levels
from .imgstats import mean_brightness
from .metrics import MetricError, check_metric_names, evaluate_pairset
from .training import (CheckpointError, CheckpointNotFound, NonFiniteLossError, Stage, StageOrderError,
                       TrainingLog, enhance, finetune_joint, load_checkpoint, pretrain_act, pretrain_bp,
                       save_checkpoint)

log = logging.getLogger("recursive_lle")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STAGE = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_training_flags(p):
    for key, (kind, _) in cfgmod.TRAINING_KEYS.items():
        p.add_argument(_flag(key), type=kind, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="recursive-lle", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"flat key=value config file (default: ${cfgmod.ENV_VAR})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="bucket a directory of low-light images into a manifest")
    p.add_argument("--input-dir")
    p.add_argument("--manifest-out")
    p.add_argument("--synthetic-from", help="darken the well-exposed images in this directory into INPUT_DIR first")
    p.add_argument("--procedural", type=int, default=None,
                   help="generate this many procedural base images into INPUT_DIR first")
    p.add_argument("--split-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=["act", "bp", "joint"], required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", help="checkpoint directory to write")
    p.add_argument("--checkpoint", help="input checkpoint (previous stage, or the one to resume)")
    p.add_argument("--resume", action="store_const", const=True, default=None)
    p.add_argument("--deterministic", type=cfgmod._parse_bool, default=None)
    _add_training_flags(p)

    p = sub.add_parser("enhance", help="enhance one image")
    p.add_argument("--checkpoint")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--trace-dir")
    p.add_argument("--force-n", type=int, default=None)

    p = sub.add_parser("evaluate", help="compute quality metrics over a pair list")
    p.add_argument("--pairs", help="tab-separated lines: original, enhanced[, reference]")
    p.add_argument("--metrics", help="comma-separated subset of psnr,ssim,eme,loe")
    p.add_argument("--report-out")
    return parser


def _require(values, *keys):
    for k in keys:
        if values.get(k) in (None, ""):
            raise CliError(f"missing required option {_flag(k)}")


def cmd_prepare(v):
    _require(v, "input_dir", "manifest_out")
    input_dir = Path(v["input_dir"])
    if v["synthetic_from"] or v["procedural"]:
        bases, names = [], []
        if v["synthetic_from"]:
            src = Path(v["synthetic_from"])
            files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
            for p in files:
                img = read_image(p)
                if mean_brightness(img) <= Level.LEVEL_4.range[1]:
                    log.warning("skipping base %s: too dark to darken into every level", p)
                    continue
                bases.append(img)
                names.append(p.stem)
        if v["procedural"]:
            gen = synthetic_bases(v["procedural"], size=64, seed=v["seed"])
            bases += gen
            names += [f"proc{k:03d}" for k in range(len(gen))]
        if not bases:
            raise CliError("no usable base images for synthetic darkening")
        write_synthetic_levels(bases, input_dir, names)
    if not input_dir.is_dir():
        raise CliError(f"input directory not found: {input_dir}")
    manifest = scan_and_bucket(input_dir, v["split_fraction"], v["seed"])
    manifest.write(v["manifest_out"])
    for split in ("train", "test"):
        counts = manifest.counts(split)
        print(f"{split}: " + "  ".join(f"{lvl}={counts[lvl]}" for lvl in Level))
    return EXIT_OK


def _load(path):
    try:
        return load_checkpoint(path)
    except CheckpointNotFound as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc


def cmd_train(v, stage):
    _require(v, "manifest", "out")
    cfg = cfgmod.training_config(v)
    if v["deterministic"]:
        torch.use_deterministic_algorithms(True)
    manifest = DatasetManifest.read(v["manifest"])
    out = Path(v["out"])
    resume_path = v["checkpoint"] or (str(out) if v["resume"] else None)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_fn = TrainingLog(out.with_name(out.name + ".train.jsonl"))
    try:
        if stage == "act":
            resume = _load(resume_path) if v["resume"] else None
            ckpt, report = pretrain_act(manifest, cfg, resume=resume, log_fn=log_fn)
        else:
            if not resume_path:
                needed = "pretrain_act" if stage == "bp" else "pretrain_bp"
                raise StageOrderError(f"--stage {stage} needs --checkpoint from stage {needed}")
            prev = _load(resume_path)
            if stage == "bp":
                ckpt, report, _ = pretrain_bp(manifest, prev, cfg, resume=bool(v["resume"]), log_fn=log_fn)
            else:
                ckpt, report = finetune_joint(manifest, prev, cfg, resume=bool(v["resume"]), log_fn=log_fn)
    finally:
        log_fn.close()
    save_checkpoint(ckpt, out)
    report.write(out.with_name(out.name + ".report.jsonl"))
    print(f"{ckpt.stage.value}: epoch {ckpt.epoch}, step {ckpt.step} -> {out}")
    return EXIT_OK


def _to_tensor(img):
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def _to_image(t):
    return t[0].detach().double().numpy().transpose(1, 2, 0)


def cmd_enhance(v):
    _require(v, "checkpoint", "input", "output")
    ckpt = _load(v["checkpoint"])
    img = read_image(v["input"])
    act = ckpt.act().eval()
    bp = None
    if v["force_n"] is None:
        if ckpt.stage is Stage.PRETRAIN_ACT:
            raise StageOrderError("checkpoint has no BP-Net; pass --force-n")
        bp = ckpt.bp().eval()
    else:
        bounds = ckpt.config.bounds
        if not bounds.rho_min <= v["force_n"] <= bounds.rho_max:
            raise CliError(f"--force-n must be in [{bounds.rho_min}, {bounds.rho_max}]")
    trace = enhance(_to_tensor(img), act, bp, n=v["force_n"], bounds=ckpt.config.bounds)
    write_image(v["output"], _to_image(trace.final))
    if v["trace_dir"]:
        tdir = Path(v["trace_dir"])
        tdir.mkdir(parents=True, exist_ok=True)
        for n, e in enumerate(trace.images[1:], 1):
            write_image(tdir / f"iter_{n:02d}.png", _to_image(e))
    print(f"{v['input']}: {trace.iterations} iteration(s), mean brightness "
          f"{mean_brightness(img):.4f} -> {mean_brightness(_to_image(trace.final)):.4f}")
    return EXIT_OK


def read_pairs(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"pair file not found: {path}")
    base = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise CliError(f"{path}:{lineno}: expected 2 or 3 tab-separated paths")
        paths = [p if Path(p).is_absolute() else str(base / p) for p in parts]
        pairs.append(paths)
    if not pairs:
        raise CliError(f"{path}: empty pair list")
    return pairs


def cmd_evaluate(v):
    _require(v, "pairs", "report_out")
    names = [m.strip().lower() for m in v["metrics"].split(",") if m.strip()]
    try:
        check_metric_names(names)
    except MetricError as exc:
        raise CliError(str(exc)) from exc
    needs_ref = {"psnr", "ssim"} & set(names)
    items = []
    for paths in read_pairs(v["pairs"]):
        if needs_ref and len(paths) < 3:
            raise CliError(f"{', '.join(sorted(needs_ref))} need a reference column: {paths[0]}")
        imgs = [read_image(p) for p in paths]
        items.append((Path(paths[1]).name, imgs[0], imgs[1], imgs[2] if len(imgs) > 2 else None))
    report = evaluate_pairset(items, names)
    table, summary = report.write(v["report_out"])
    sys.stdout.write(report.to_table())
    print(f"report: {table}  summary: {summary}")
    return EXIT_OK


COMMAND_KEYS = {
    "prepare": ["input_dir", "manifest_out", "synthetic_from", "procedural", "split_fraction", "seed"],
    "train": ["manifest", "out", "checkpoint", "resume", "deterministic"] + list(cfgmod.TRAINING_KEYS),
    "enhance": ["checkpoint", "input", "output", "trace_dir", "force_n"],
    "evaluate": ["pairs", "metrics", "report_out"],
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = cfgmod.config_path(args.config)
        file_values = cfgmod.load_config_file(path) if path else {}
        values = cfgmod.resolve(args, file_values, COMMAND_KEYS[args.command])
        if args.command == "prepare":
            return cmd_prepare(values)
        if args.command == "train":
            return cmd_train(values, args.stage)
        if args.command == "enhance":
            return cmd_enhance(values)
        return cmd_evaluate(values)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except StageOrderError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, MetricError, cfgmod.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
