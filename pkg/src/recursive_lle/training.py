"""Three-stage unsupervised training and checkpoint persistence.

Stages run strictly in order:

1. ``pretrain_act``  - ACT-Net alone on Level_4 images, one correction step,
   exposure + colour + smoothness losses.
2. ``pretrain_bp``   - ACT-Net frozen; pseudo-labels from the recursive loop;
   BP-Net fitted to them with an L1 loss.
3. ``finetune_joint`` - both networks; per-sample unroll depth from BP-Net,
   pseudo-labels refreshed every epoch, weighted total loss.

A checkpoint is a directory holding ``params.bin`` (tensor blob) and
``meta.txt`` (``key = value`` lines with format version, stage, epoch, step and
the config snapshot).
"""
import enum
import hashlib
import json
import logging
import math
import os
import shutil
import struct
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .actnet import ACTNet
from .bpnet import BPNet, RecursionBounds, perception_loss, round_half_up
from .data import DatasetError, Level, _cached, crop_or_pad, sample_batch
from .imgstats import brightness_histogram, histogram_t, mean_brightness_t, rgb_to_v, v_channel_t
from .losses import ExposureTarget, LossWeights, color_constancy_loss, exposure_loss, smoothness_loss, total_loss
from .recursion import correction_step, curve_map, enhance_recursive, pseudo_labels

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
PARAMS_MAGIC = b"RLLEPAR1"
LABEL_CHUNK = 16


class TrainingError(Exception):
    pass


class StageOrderError(TrainingError):
    pass


class NonFiniteLossError(TrainingError):
    pass


class CheckpointError(TrainingError):
    pass


class CheckpointNotFound(CheckpointError, FileNotFoundError):
    pass


class Stage(str, enum.Enum):
    PRETRAIN_ACT = "pretrain_act"
    PRETRAIN_BP = "pretrain_bp"
    FINETUNED = "finetuned"

    @property
    def order(self):
        return list(Stage).index(self)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    patch_size: int = 512
    epochs: int = 200
    max_steps: int = 0  # 0: no cap beyond the epoch budget
    rho_min: int = 1
    rho_max: int = 10
    w_exp: float = 1.0
    w_col: float = 0.5
    w_tv: float = 200.0
    w_p: float = 0.001
    exposure_level: float = 0.6
    exposure_patch: int = 16
    exposure_channel: str = "rgb_mean"
    label_threshold: float = 0.6
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "patch_size", "epochs", "exposure_patch", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patch_size % 4:
            raise ValueError("patch_size must be divisible by 4")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        RecursionBounds(self.rho_min, self.rho_max)
        LossWeights(self.w_exp, self.w_col, self.w_tv, self.w_p)
        ExposureTarget(self.exposure_level, self.exposure_patch, self.exposure_channel)

    @property
    def bounds(self):
        return RecursionBounds(self.rho_min, self.rho_max)

    @property
    def weights(self):
        return LossWeights(self.w_exp, self.w_col, self.w_tv, self.w_p)

    @property
    def exposure(self):
        return ExposureTarget(self.exposure_level, self.exposure_patch, self.exposure_channel)

    def to_items(self):
        return asdict(self)

    @classmethod
    def from_items(cls, items):
        """Build from string or typed values keyed by field name."""
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in items.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = types[key](value)
        return cls(**kwargs)


@dataclass
class Checkpoint:
    act_state: dict
    bp_state: dict | None
    stage: Stage
    epoch: int
    step: int
    config: TrainingConfig
    format_version: int = FORMAT_VERSION

    def act(self):
        net = ACTNet()
        net.load_state_dict(self.act_state)
        return net

    def bp(self):
        if self.bp_state is None:
            raise StageOrderError(f"checkpoint at stage {self.stage.value} has no BP-Net parameters")
        net = BPNet(self.config.bounds)
        net.load_state_dict(self.bp_state)
        return net


@dataclass
class StageReport:
    stage: str
    epochs: list = field(default_factory=list)  # one dict per epoch

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps({"stage": self.stage, **rec}, sort_keys=True) + "\n")


class TrainingLog:
    """Line-oriented JSON records, one per optimisation step."""

    def __init__(self, path=None):
        self.records = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def __call__(self, **rec):
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


# checkpoint persistence

def _state_to_blob(states):
    header, chunks, offset = [], [], 0
    for prefix, state in states:
        for name in sorted(state):
            arr = state[name].detach().cpu().contiguous().numpy()
            raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            header.append({"name": f"{prefix}.{name}", "dtype": arr.dtype.str.lstrip("<>|="),
                           "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    head = json.dumps({"tensors": header}, sort_keys=True, separators=(",", ":")).encode()
    return PARAMS_MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def _blob_to_states(blob):
    if blob[:8] != PARAMS_MAGIC:
        raise CheckpointError("params.bin: bad magic")
    try:
        (n,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + n])
        data = memoryview(blob)[16 + n:]
        states = {}
        for t in header["tensors"]:
            raw = data[t["offset"]:t["offset"] + t["nbytes"]]
            if len(raw) != t["nbytes"]:
                raise CheckpointError("params.bin: truncated tensor data")
            arr = np.frombuffer(raw, dtype=np.dtype("<" + t["dtype"])).reshape(t["shape"]).copy()
            prefix, name = t["name"].split(".", 1)
            states.setdefault(prefix, {})[name] = torch.from_numpy(arr)
    except (ValueError, KeyError, struct.error) as exc:
        raise CheckpointError(f"params.bin: corrupt archive ({exc})") from exc
    return states


def save_checkpoint(ckpt, path):
    """Write ``ckpt`` to directory ``path`` atomically (temp dir, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    states = [("act", ckpt.act_state)]
    if ckpt.bp_state is not None:
        states.append(("bp", ckpt.bp_state))
    meta = [
        f"format_version = {ckpt.format_version}",
        f"stage = {ckpt.stage.value}",
        f"epoch = {ckpt.epoch}",
        f"step = {ckpt.step}",
    ]
    meta += [f"config.{k} = {v!r}" if isinstance(v, float) else f"config.{k} = {v}"
             for k, v in ckpt.config.to_items().items()]
    tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent))
    try:
        (tmp / "params.bin").write_bytes(_state_to_blob(states))
        (tmp / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
        if path.exists():
            old = path.with_name(path.name + ".old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path):
    path = Path(path)
    meta_path, params_path = path / "meta.txt", path / "params.bin"
    if not meta_path.is_file() or not params_path.is_file():
        raise CheckpointNotFound(f"no checkpoint at {path}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    try:
        version = int(meta["format_version"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{meta_path}: missing format_version") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} unsupported (expected {FORMAT_VERSION})")
    try:
        config = TrainingConfig.from_items(
            {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")})
        stage = Stage(meta["stage"])
        epoch, step = int(meta["epoch"]), int(meta["step"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{meta_path}: corrupt metadata ({exc})") from exc
    states = _blob_to_states(params_path.read_bytes())
    if "act" not in states:
        raise CheckpointError("params.bin: no ACT-Net parameters")
    return Checkpoint(states["act"], states.get("bp"), stage, epoch, step, config, version)


def state_checksum(module_or_state):
    state = module_or_state.state_dict() if hasattr(module_or_state, "state_dict") else module_or_state
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# helpers

def _setup(cfg, start_epoch):
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed + start_epoch)
    return np.random.default_rng([cfg.seed, start_epoch])


def _to_tensor(images):
    if isinstance(images, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()
    return [torch.from_numpy(np.ascontiguousarray(im.transpose(2, 0, 1)))[None].float() for im in images]


def _record_tensor(rec, patch):
    # deterministic full view for labelling and validation: top-left crop
    img = _cached(rec.path)
    return _to_tensor(crop_or_pad(img[:patch, :patch], patch, np.random.default_rng(0))[None])


def _check_finite(value, stage, step):
    if not math.isfinite(value):
        raise NonFiniteLossError(f"{stage}: non-finite loss at step {step}")


def _require(ckpt, allowed, stage):
    if ckpt is None:
        raise StageOrderError(f"{stage} needs a checkpoint from stage {' or '.join(s.value for s in allowed)}")
    if ckpt.stage not in allowed:
        raise StageOrderError(
            f"{stage} cannot start from a {ckpt.stage.value} checkpoint "
            f"(needs {' or '.join(s.value for s in allowed)})")


def _steps_per_epoch(n_records, batch):
    return max(1, math.ceil(n_records / batch))


def _step_budget(cfg, n_records, start_step):
    per_epoch = _steps_per_epoch(n_records, cfg.batch_size)
    budget = per_epoch * cfg.epochs
    if cfg.max_steps:
        budget = min(budget, cfg.max_steps)
    return per_epoch, start_step + budget


def _labels_for(records, act, cfg):
    labels = []
    for s in range(0, len(records), LABEL_CHUNK):
        batch = torch.cat([_record_tensor(r, cfg.patch_size) for r in records[s:s + LABEL_CHUNK]])
        labels += pseudo_labels(batch, act, cfg.label_threshold, cfg.rho_max)
    return labels


def _histograms(records, cfg):
    hists = [brightness_histogram(rgb_to_v(_cached(r.path)[:cfg.patch_size, :cfg.patch_size])) for r in records]
    return torch.from_numpy(np.stack(hists)).float()


# stages

def pretrain_act(manifest, cfg, resume=None, log_fn=None):
    """Stage (a): train ACT-Net for single-step enhancement of Level_4 images."""
    records = manifest.select([Level.LEVEL_4], "train")
    if not records:
        raise DatasetError("pretrain_act needs Level_4 training records")
    if resume is not None:
        _require(resume, [Stage.PRETRAIN_ACT], "pretrain_act resume")
    start_epoch = resume.epoch if resume else 0
    step = resume.step if resume else 0
    rng = _setup(cfg, start_epoch)
    act = resume.act() if resume else ACTNet()
    opt = torch.optim.Adam(act.parameters(), lr=cfg.learning_rate)
    held_out = manifest.select([Level.LEVEL_4], "test")
    log_fn = log_fn or TrainingLog()
    report = StageReport(Stage.PRETRAIN_ACT.value)
    per_epoch, last = _step_budget(cfg, len(records), step)
    epoch = start_epoch
    while step < last:
        epoch += 1
        t0 = time.perf_counter()
        sums = np.zeros(4)
        n = 0
        for _ in range(per_epoch):
            if step >= last:
                break
            images, _ = sample_batch(manifest, [Level.LEVEL_4], cfg.batch_size, cfg.patch_size, rng)
            x = _to_tensor(images)
            m = curve_map(act, x)
            e1 = correction_step(x, m)
            l_exp = exposure_loss(e1, cfg.exposure)
            l_col = color_constancy_loss(e1)
            l_tv = smoothness_loss([m])
            loss = total_loss(l_exp, l_col, l_tv, 0.0, cfg.weights)
            step += 1
            _check_finite(loss.item(), "pretrain_act", step)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(act.parameters(), cfg.grad_clip)
            opt.step()
            vals = [loss.item(), l_exp.item(), l_col.item(), l_tv.item()]
            sums += vals
            n += 1
            log_fn(stage="pretrain_act", epoch=epoch, step=step, loss_total=vals[0], l_exp=vals[1],
                   l_col=vals[2], l_tv=vals[3], mean_brightness=float(mean_brightness_t(e1.detach()).mean()))
        rec = dict(zip(("loss_total", "l_exp", "l_col", "l_tv"), (sums / max(n, 1)).tolist()))
        rec.update(epoch=epoch, steps=n, wall_time=time.perf_counter() - t0)
        if held_out:
            rec["val_mean_brightness"] = single_step_brightness(act, held_out, cfg)
        report.epochs.append(rec)
    ckpt = Checkpoint(act.state_dict(), None, Stage.PRETRAIN_ACT, epoch, step, cfg)
    return ckpt, report


@torch.no_grad()
def single_step_brightness(act, records, cfg):
    """Mean V-channel brightness of E_1 over ``records``."""
    vals = []
    for r in records:
        x = _record_tensor(r, cfg.patch_size)
        vals.append(float(mean_brightness_t(correction_step(x, curve_map(act, x)))[0]))
    return float(np.mean(vals))


def pretrain_bp(manifest, ckpt, cfg, resume=False, log_fn=None):
    """Stage (b): fit BP-Net to pseudo-labels produced by the frozen ACT-Net."""
    _require(ckpt, [Stage.PRETRAIN_ACT] + ([Stage.PRETRAIN_BP] if resume else []), "pretrain_bp")
    records = manifest.select(None, "train")
    if not records:
        raise DatasetError("pretrain_bp needs training records")
    start_epoch = ckpt.epoch if ckpt.stage is Stage.PRETRAIN_BP else 0
    step = ckpt.step if ckpt.stage is Stage.PRETRAIN_BP else 0
    rng = _setup(cfg, start_epoch)
    act = ckpt.act()
    act.eval()
    for p in act.parameters():
        p.requires_grad_(False)
    before = state_checksum(act)
    bp = ckpt.bp() if ckpt.bp_state is not None else BPNet(cfg.bounds)
    labels = torch.tensor(_labels_for(records, act, cfg), dtype=torch.float32)
    hists = _histograms(records, cfg)
    opt = torch.optim.Adam(bp.parameters(), lr=cfg.learning_rate)
    log_fn = log_fn or TrainingLog()
    report = StageReport(Stage.PRETRAIN_BP.value)
    per_epoch, last = _step_budget(cfg, len(records), step)
    epoch = start_epoch
    while step < last:
        epoch += 1
        t0 = time.perf_counter()
        order = rng.permutation(len(records))
        total, n = 0.0, 0
        for k in range(per_epoch):
            if step >= last:
                break
            idx = order[(k * cfg.batch_size) % len(order):][:cfg.batch_size]
            if len(idx) < cfg.batch_size:
                idx = np.concatenate([idx, order[:cfg.batch_size - len(idx)]])
            idx = torch.from_numpy(idx)
            loss = perception_loss(bp(hists[idx]), labels[idx])
            step += 1
            _check_finite(loss.item(), "pretrain_bp", step)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(bp.parameters(), cfg.grad_clip)
            opt.step()
            total += loss.item()
            n += 1
            log_fn(stage="pretrain_bp", epoch=epoch, step=step, l_p=loss.item(), loss_total=loss.item())
        with torch.no_grad():
            mae = float((bp(hists) - labels).abs().mean())
        report.epochs.append(dict(epoch=epoch, steps=n, l_p=total / max(n, 1), train_mae=mae,
                                  wall_time=time.perf_counter() - t0))
    if state_checksum(act) != before:
        raise TrainingError("ACT-Net parameters changed while frozen")
    out = Checkpoint(ckpt.act_state, bp.state_dict(), Stage.PRETRAIN_BP, epoch, step, cfg)
    return out, report, labels.long().tolist()


def _joint_losses(x, act, bp, labels, cfg):
    """Per-sample unroll with depth from BP-Net; returns mean losses and E_N brightness."""
    values = bp(histogram_t(v_channel_t(x)))
    with torch.no_grad():
        depths = [min(max(round_half_up(v), cfg.rho_min), cfg.rho_max) for v in values.tolist()]
    parts = {"l_exp": 0.0, "l_col": 0.0, "l_tv": 0.0}
    bright = 0.0
    groups = {}
    for i, d in enumerate(depths):
        groups.setdefault(d, []).append(i)
    b = x.shape[0]
    for d, idx in sorted(groups.items()):
        trace = enhance_recursive(x[idx], act, d, cfg.rho_max)
        w = len(idx) / b
        parts["l_exp"] = parts["l_exp"] + w * exposure_loss(trace.final, cfg.exposure)
        parts["l_col"] = parts["l_col"] + w * color_constancy_loss(trace.final)
        parts["l_tv"] = parts["l_tv"] + w * smoothness_loss(trace.maps)
        bright += w * float(mean_brightness_t(trace.final.detach()).mean())
    parts["l_p"] = perception_loss(values, labels)
    return parts, depths, bright


def finetune_joint(manifest, ckpt, cfg, resume=False, log_fn=None):
    """Stage (c): jointly optimise both networks with the weighted total loss."""
    _require(ckpt, [Stage.PRETRAIN_BP] + ([Stage.FINETUNED] if resume else []), "finetune_joint")
    records = manifest.select(None, "train")
    if not records:
        raise DatasetError("finetune_joint needs training records")
    start_epoch = ckpt.epoch if ckpt.stage is Stage.FINETUNED else 0
    step = ckpt.step if ckpt.stage is Stage.FINETUNED else 0
    rng = _setup(cfg, start_epoch)
    act, bp = ckpt.act(), ckpt.bp()
    opt = torch.optim.Adam(list(act.parameters()) + list(bp.parameters()), lr=cfg.learning_rate)
    index = {r.path: k for k, r in enumerate(records)}
    held_out = manifest.select(None, "test")
    log_fn = log_fn or TrainingLog()
    report = StageReport(Stage.FINETUNED.value)
    per_epoch, last = _step_budget(cfg, len(records), step)
    epoch = start_epoch
    while step < last:
        epoch += 1
        t0 = time.perf_counter()
        act.eval()
        labels = _labels_for(records, act, cfg)
        act.train()
        sums = np.zeros(5)
        n = 0
        for _ in range(per_epoch):
            if step >= last:
                break
            images, recs = sample_batch(manifest, None, cfg.batch_size, cfg.patch_size, rng)
            x = _to_tensor(images)
            y = torch.tensor([labels[index[r.path]] for r in recs], dtype=torch.float32)
            parts, depths, bright = _joint_losses(x, act, bp, y, cfg)
            loss = total_loss(parts["l_exp"], parts["l_col"], parts["l_tv"], parts["l_p"], cfg.weights)
            step += 1
            _check_finite(loss.item(), "finetune_joint", step)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(list(act.parameters()) + list(bp.parameters()), cfg.grad_clip)
            opt.step()
            vals = [loss.item()] + [float(torch.as_tensor(parts[k]).detach()) for k in ("l_exp", "l_col", "l_tv", "l_p")]
            sums += vals
            n += 1
            log_fn(stage="finetune_joint", epoch=epoch, step=step, loss_total=vals[0], l_exp=vals[1],
                   l_col=vals[2], l_tv=vals[3], l_p=vals[4], mean_brightness=bright, depths=depths)
        rec = dict(zip(("loss_total", "l_exp", "l_col", "l_tv", "l_p"), (sums / max(n, 1)).tolist()))
        rec.update(epoch=epoch, steps=n, wall_time=time.perf_counter() - t0)
        if held_out:
            rec["val_mean_brightness"] = {str(k): v for k, v in level_brightness(act, bp, held_out, cfg).items()}
        report.epochs.append(rec)
    out = Checkpoint(act.state_dict(), bp.state_dict(), Stage.FINETUNED, epoch, step, cfg)
    return out, report


@torch.no_grad()
def enhance(x, act, bp=None, n=None, bounds=None):
    """Inference: N from BP-Net (or ``n``), then the recursive trace for a (1,3,H,W) tensor."""
    bounds = bounds or (bp.bounds if bp is not None else RecursionBounds())
    if n is None:
        if bp is None:
            raise ValueError("need a BP-Net or an explicit iteration count")
        n = bp.predict(histogram_t(v_channel_t(x)))[0].rounded
    return enhance_recursive(x, act, n, bounds.rho_max)


@torch.no_grad()
def level_brightness(act, bp, records, cfg):
    """Mean final brightness per level after BP-controlled enhancement."""
    out = {}
    for r in records:
        x = _record_tensor(r, cfg.patch_size)
        e = enhance(x, act, bp).final
        out.setdefault(r.level, []).append(float(mean_brightness_t(e)[0]))
    return {lvl: float(np.mean(v)) for lvl, v in sorted(out.items())}


def smoke_config(**overrides):
    """Desk-scale settings used by the tests and the README walkthrough."""
    base = TrainingConfig(patch_size=64, batch_size=8, epochs=1000)
    return replace(base, **overrides)
