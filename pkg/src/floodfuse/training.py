"""Adam + poly-schedule training loop, evaluation and footprint-to-flood transfer."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import functional as F
from .metrics import ConfusionMatrix, confusion, iou_metrics, predict_classes
from .network import FusionConfig, FusionNet, extend_input_channels


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-2
    power: float = 0.9
    batch_size: int = 8
    max_iter: int = 20000
    conv_window: int = 200
    conv_threshold: float = 1e-4
    seed: int = 0
    task: str = "footprint"
    init: str = "random"
    augment: bool = True
    weight_decay: float = 0.0
    clip_grad: float | None = None
    eval_every: int = 0
    checkpoint_every: int = 0
    stop_on_convergence: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not self.power > 0:
            raise ValueError(f"power must be > 0, got {self.power}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.conv_window < 1:
            raise ValueError("conv_window must be >= 1")
        if self.task not in ("footprint", "flood"):
            raise ValueError(f"task must be footprint or flood, got {self.task!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.clip_grad is not None and self.clip_grad <= 0:
            raise ValueError("clip_grad must be > 0 when set")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def poly_lr(iteration, max_iter, base, power):
    """base * (1 - iteration / max_iter) ** power."""
    if max_iter <= 0:
        raise ValueError("max_iter must be > 0")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on the ``params`` arrays.

    ``params`` and ``grads`` map names to arrays. A missing or ``None``
    gradient counts as zero.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


def _grads(model, cfg):
    named = dict(model.named_parameters())
    grads = {n: p.grad for n, p in named.items()}
    if cfg.weight_decay:
        grads = {n: (g if g is not None else 0) + cfg.weight_decay * named[n].data for n, g in grads.items()}
    if cfg.clip_grad is not None:
        norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values() if g is not None))
        if norm > cfg.clip_grad:
            scale = cfg.clip_grad / norm
            grads = {n: None if g is None else g * scale for n, g in grads.items()}
    return {n: p.data for n, p in named.items()}, grads


def predict(model, dataset, idx, batch_size=8):
    """Class grids for tile indices ``idx`` (eval mode)."""
    was_training = model.training
    model.eval()
    out = []
    try:
        for k in range(0, len(idx), batch_size):
            chunk = idx[k:k + batch_size]
            inputs, _ = dataset.batch(chunk, "footprint")
            out.append(predict_classes(model(inputs).data))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, dataset.common_pixels, dataset.common_pixels), np.uint8)


def evaluate(model, dataset, split, task, batch_size=8):
    """Global confusion matrix over every tile of ``split``."""
    idx = dataset.indices(split)
    if not idx:
        raise ValueError(f"split {split!r} has no tiles")
    preds = predict(model, dataset, idx, batch_size)
    cm = ConfusionMatrix()
    for pred, i in zip(preds, idx):
        cm = cm + confusion(pred, dataset.tiles[i].labels[task])
    return cm


@dataclass
class TrainResult:
    losses: list
    lrs: list
    iterations: int
    stop_reason: str
    val_history: list = field(default_factory=list)  # (iteration, val mIoU)
    seconds: float = 0.0


def model_metadata(model, dataset, cfg):
    meta = model.metadata()
    meta["input_stats"] = dataset.stats
    meta["task"] = cfg.task
    meta["train_config"] = asdict(cfg)
    meta["dataset"] = dataset.meta
    return meta


def save_model(model, path, meta=None):
    path = Path(path)
    checkpoint.save(path, model.state_dict())
    if meta is not None:
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_model(path, seed=0):
    """Rebuild a FusionNet from a checkpoint and its metadata sidecar."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    model = FusionNet(FusionConfig.from_dict(meta["fusion"]), seed)
    model.load_state_dict(checkpoint.load(path))
    return model, meta


def _converged(losses, window, threshold):
    if len(losses) < 2 * window or len(losses) % window:
        return False
    prev = float(np.mean(losses[-2 * window:-window]))
    cur = float(np.mean(losses[-window:]))
    return (prev - cur) < threshold * abs(prev)


def train(model, dataset, cfg, out_dir=None, log=None, val_split="val"):
    """Optimize ``model`` on the train tiles of ``dataset``.

    Writes ``metrics.jsonl`` and checkpoints to ``out_dir`` when given.
    ``log`` is an optional callback receiving each metrics record.
    """
    train_idx = dataset.indices("train")
    if not train_idx:
        raise TrainingError("dataset has no train tiles")
    if dataset.positives("train", cfg.task) == 0:
        raise TrainingError(f"train tiles contain no positive {cfg.task} pixels")
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState()
    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "metrics.jsonl", "w")
    val_ok = cfg.eval_every > 0 and dataset.count(val_split) > 0
    losses, lrs, val_history = [], [], []
    reason = "max_iter"
    start = time.perf_counter()
    model.train()
    try:
        for it in range(cfg.max_iter):
            lr = poly_lr(it, cfg.max_iter, cfg.base_lr, cfg.power)
            picks = rng.integers(0, len(train_idx), cfg.batch_size)
            ops = rng.integers(0, 8, cfg.batch_size) if cfg.augment else np.zeros(cfg.batch_size, int)
            inputs, target = dataset.batch([train_idx[j] for j in picks], cfg.task, ops.tolist())
            model.zero_grad()
            loss = F.softmax_cross_entropy(model(inputs), target)
            loss.backward()
            params, grads = _grads(model, cfg)
            adam_step(params, grads, state, lr)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at iteration {it}")
            losses.append(value)
            lrs.append(lr)
            rec = {"iteration": it, "loss": value, "lr": lr}
            if val_ok and (it + 1) % cfg.eval_every == 0:
                miou = iou_metrics(evaluate(model, dataset, val_split, cfg.task))["mIoU"]
                val_history.append((it + 1, miou))
                rec["val_miou"] = miou
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if log is not None:
                log(rec)
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_model(model, out / f"iter_{it + 1:06d}.ckpt", model_metadata(model, dataset, cfg))
            if cfg.stop_on_convergence and _converged(losses, cfg.conv_window, cfg.conv_threshold):
                reason = "converged"
                break
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        save_model(model, out / "model.ckpt", model_metadata(model, dataset, cfg))
    return TrainResult(losses, lrs, len(losses), reason, val_history, time.perf_counter() - start)


def transfer_init(model, state):
    """Load a footprint checkpoint (name -> array) into ``model`` by name.

    First-layer kernels with 3 input channels are widened with
    :func:`extend_input_channels` when the model expects more. Returns a
    report with loaded, extended and unmatched names.
    """
    own = {n: p.data for n, p in model.named_parameters()}
    own.update(model.named_buffers())
    plan, extended, conflicts = [], [], []
    for name, arr in state.items():
        if name not in own:
            continue
        target = own[name]
        if arr.shape != target.shape:
            if (arr.ndim == 4 and target.ndim == 4 and arr.shape[1] == 3
                    and arr.shape[0] == target.shape[0] and arr.shape[2:] == target.shape[2:]):
                arr = extend_input_channels(arr, target.shape[1])
                extended.append(name)
            else:
                conflicts.append(f"{name}: checkpoint {arr.shape} vs model {target.shape}")
                continue
        plan.append((name, target, arr))
    if conflicts:
        raise ValueError("unresolvable shape conflicts: " + "; ".join(conflicts))
    for _, target, arr in plan:
        target[...] = arr
    loaded = [name for name, _, _ in plan]
    return {
        "loaded": loaded,
        "extended": extended,
        "missing": sorted(set(own) - set(loaded)),
        "unexpected": sorted(set(state) - set(own)),
    }
