"""Desk-scale training experiments on synthetic scenes.

``fusion_benefit`` trains every stream combination on a scene whose flood cue
lives only in the radar coherence and whose building shapes are sharp only in
VHR, then scores each model on the held-out tiles. ``transfer_benefit``
compares flood training from a footprint checkpoint against random init.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import build_dataset, prepare_radar
from .geodata.synth import SceneConfig, synth_scene
from .metrics import iou_metrics
from .network import FusionConfig, FusionNet, stream_for
from .training import TrainConfig, evaluate, train, transfer_init

COMBOS = ("s1", "s2", "vhr", "s1+s2", "s1+s2+vhr")
SMALL_WIDTHS = (8, 16, 32, 32)
SMALL_BLOCKS = (1, 1, 1, 1)


def modality_split_scene(**overrides):
    """Scene where S1 alone carries the flood cue and VHR alone has crisp shapes."""
    base = dict(width_m=1920.0, height_m=960.0, n_buildings=180, s1_building_contrast=0.0,
                s2_flood_contrast=0.0, vhr_gsd=4.0, flood_radius_frac=0.1)
    base.update(overrides)
    return SceneConfig(**base)


@dataclass
class ExperimentSetup:
    tile_m: float = 320.0
    stride_m: float = 160.0
    common_gsd: float = 4.0
    widths: tuple = SMALL_WIDTHS
    blocks: tuple = SMALL_BLOCKS
    gsd: dict = field(default_factory=lambda: {"s1": 5.0, "s2": 10.0, "vhr": 4.0})

    def fusion_config(self, combo):
        streams = [stream_for(s, self.tile_m, self.gsd[s], widths=self.widths, blocks=self.blocks)
                   for s in combo.split("+")]
        return FusionConfig(streams, self.tile_m, self.common_gsd)


def scene_bundles(seed, config, window=5):
    scene = synth_scene(seed, config)
    bundles = dict(scene.bundles)
    bundles.update(prepare_radar(bundles, window))
    return bundles, scene.labels


def run_combo(bundles, labels, combo, setup, train_cfg, model_seed):
    fcfg = setup.fusion_config(combo)
    ds = build_dataset(bundles, labels, fcfg, stride_m=setup.stride_m, seed=0)
    model = FusionNet(fcfg, model_seed)
    result = train(model, ds, replace(train_cfg, seed=model_seed))
    metrics = iou_metrics(evaluate(model, ds, "test", train_cfg.task))
    return {"combo": combo, "seed": model_seed, "iterations": result.iterations,
            "seconds": result.seconds, **metrics}


def overfit_check(n_tiles=8, iterations=2000, eval_every=250, scene_seed=0, model_seed=0):
    """Train an S2-only desk model on ``n_tiles`` train tiles; return the
    train-set mIoU history and the final value."""
    scene = synth_scene(scene_seed, SceneConfig())
    fcfg = FusionConfig([stream_for("s2", 320.0)], 320.0)
    ds = build_dataset(scene.bundles, scene.labels, fcfg, stride_m=160.0, seed=0)
    keep = set(ds.indices("train")[:n_tiles])
    ds = replace(ds, tiles=[replace(t, split="train" if i in keep else "unused") for i, t in enumerate(ds.tiles)])
    model = FusionNet(fcfg, model_seed)
    cfg = TrainConfig(max_iter=iterations, eval_every=eval_every, seed=model_seed, stop_on_convergence=False)
    res = train(model, ds, cfg, val_split="train")
    return {"history": res.val_history, "final": res.val_history[-1][1], "seconds": res.seconds}


def fusion_benefit(seeds=(0, 1, 2), iterations=1000, batch_size=8, scene_seed=0, setup=None,
                   combos=COMBOS, log=None):
    """Held-out flood mIoU per stream combination and seed."""
    setup = setup or ExperimentSetup()
    bundles, labels = scene_bundles(scene_seed, modality_split_scene())
    cfg = TrainConfig(max_iter=iterations, batch_size=batch_size, task="flood", stop_on_convergence=False)
    rows = []
    for seed in seeds:
        for combo in combos:
            row = run_combo(bundles, labels, combo, setup, cfg, seed)
            rows.append(row)
            if log is not None:
                log(row)
    return rows


def medians(rows, key="mIoU"):
    by = {}
    for r in rows:
        by.setdefault(r["combo"], []).append(r[key])
    return {c: statistics.median(v) for c, v in by.items()}


def iterations_to_threshold(val_history, threshold):
    for it, miou in val_history:
        if miou >= threshold:
            return it
    return None


def transfer_benefit(seeds=(0, 1, 2), pretrain_iters=600, finetune_iters=800, eval_every=25,
                     threshold=0.6, batch_size=8, scene_seed=0, log=None):
    """Iterations to reach ``threshold`` val mIoU on the flood task, from a
    footprint checkpoint versus from random init (S2 stream, same seeds)."""
    bundles, labels = scene_bundles(scene_seed, SceneConfig(width_m=1920.0, height_m=960.0, n_buildings=180))
    fcfg = FusionConfig([stream_for("s2", 320.0)], 320.0)
    ds = build_dataset(bundles, labels, fcfg, stride_m=160.0, seed=0)
    out = []
    for seed in seeds:
        t0 = time.perf_counter()
        pre = FusionNet(fcfg, seed)
        train(pre, ds, TrainConfig(max_iter=pretrain_iters, batch_size=batch_size, task="footprint",
                                   seed=seed, stop_on_convergence=False))
        ckpt = {k: np.array(v, copy=True) for k, v in pre.state_dict().items()}
        row = {"seed": seed}
        for init in ("random", "transfer"):
            model = FusionNet(fcfg, seed)
            if init == "transfer":
                row["report"] = transfer_init(model, ckpt)
            res = train(model, ds, TrainConfig(max_iter=finetune_iters, batch_size=batch_size, task="flood",
                                               seed=seed, eval_every=eval_every, stop_on_convergence=False))
            row[init] = iterations_to_threshold(res.val_history, threshold)
            row[f"{init}_history"] = res.val_history
        row["seconds"] = time.perf_counter() - t0
        out.append(row)
        if log is not None:
            log(row)
    return out
