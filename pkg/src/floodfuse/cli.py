"""Command-line entry point: synth, prep, tile, train, eval, render, diff.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import uuid
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .dataset import DatasetError, build_dataset, prepare_radar
from .geodata.raster import GeometryError, read_bundle, write_bundle
from .geodata.synth import SceneConfig, synth_scene
from .geodata.vector import LabelError, load_labels, save_labels
from .metrics import diff_overlay, iou_metrics, metrics_report, render_map
from .network import DESK_WIDTHS, FusionConfig, FusionNet, StreamConfig, stream_for
from .training import TrainConfig, TrainingError, evaluate, load_model, predict, train, transfer_init

STREAM_CHOICES = ("s1", "s2", "vhr", "s1+s2", "s1+s2+vhr")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
VALIDATION_ERRORS = (ValueError, KeyError, FileNotFoundError, FileExistsError, LabelError,
                     GeometryError, DatasetError, CheckpointError)


class CliError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def _resolve(args, path):
    p = Path(path)
    return p if p.is_absolute() else Path(args.workdir) / p


def _prepare_out(args, path, allow_existing=False):
    out = _resolve(args, path)
    if out.exists() and any(out.iterdir()) and not (args.force or allow_existing):
        raise FileExistsError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args):
    if not args.config:
        return {}
    path = _resolve(args, args.config)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            raise CliError("TOML configs need Python 3.11+; use a JSON config") from None
        return tomllib.loads(text)
    return json.loads(text)


def _manifest(args, command, config, artifacts, out, name="manifest.json"):
    root = Path(out)
    man = {
        "run_id": uuid.uuid5(uuid.NAMESPACE_URL, json.dumps([command, config, args.seed], sort_keys=True,
                                                            default=str)).hex,
        "command": command,
        "tool_version": __version__,
        "seed": args.seed,
        "config": config,
        "artifacts": sorted(str(Path(a).relative_to(root)) if Path(a).is_relative_to(root) else str(a)
                            for a in artifacts),
    }
    (root / name).write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    return man


def _emit(args, payload):
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


def load_dataset_dir(path):
    """All bundles (subdirectories with meta.json) plus polygon labels."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} not found")
    bundles = {d.name: read_bundle(d) for d in sorted(path.iterdir()) if (d / "meta.json").is_file()}
    labels_path = path / "labels.geojson"
    if not labels_path.is_file():
        raise FileNotFoundError(f"{labels_path} not found")
    return bundles, load_labels(labels_path)


def _parse_ints(text):
    return tuple(int(v) for v in str(text).split(","))


def fusion_from_args(args, bundles, file_cfg):
    model_cfg = dict(file_cfg.get("model", {}))
    sensors = args.streams.split("+")
    tile_m = args.tile_m or model_cfg.get("tile_m", 320.0)
    widths = _parse_ints(args.widths) if args.widths else tuple(model_cfg.get("widths", DESK_WIDTHS))
    blocks = _parse_ints(args.blocks) if args.blocks else tuple(model_cfg.get("blocks", (2, 2, 2, 2)))
    gsd_over = {"vhr": args.vhr_gsd or model_cfg.get("vhr_gsd")}
    streams = []
    for s in sensors:
        src = {"s1": "radar_pre", "s2": "s2_pre", "vhr": "vhr"}[s]
        if src not in bundles:
            hint = " (run prep first)" if s == "s1" else ""
            raise CliError(f"stream {s!r} requested but bundle {src!r} is absent from the dataset{hint}")
        gsd = gsd_over.get(s) or bundles[src].grid.pixel_size
        streams.append(stream_for(s, tile_m, gsd, widths=widths, blocks=blocks))
    common = args.common_gsd or model_cfg.get("common_gsd")
    if common is None and "vhr" in sensors:
        common = next(st.gsd for st in streams if st.sensor == "vhr")
    return FusionConfig(streams, tile_m, common, fusion_width=model_cfg.get("fusion_width", 16))


def _split_kwargs(args, file_cfg):
    split = dict(file_cfg.get("split", {}))
    if args.tiles:
        split.update(json.loads(_resolve(args, args.tiles).read_text())["params"])
    out = {
        "stride_m": args.stride_m or split.get("stride_m"),
        "boundary": args.boundary if args.boundary is not None else split.get("boundary"),
        "test_side": args.test_side or split.get("test_side", "west"),
        "seed": split.get("seed", args.seed),
    }
    return out


# --------------------------------------------------------------- commands

def cmd_synth(args):
    file_cfg = _load_config(args).get("synth", {})
    cfg = SceneConfig(**file_cfg)
    for f in fields(SceneConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    cfg.validate()
    out = _prepare_out(args, args.out_dir)
    scene = synth_scene(args.seed, cfg)
    artifacts = []
    for name, b in scene.bundles.items():
        write_bundle(b, out / name)
        artifacts += [out / name / "meta.json", out / name / "data.bin"]
    save_labels(scene.labels, out / "labels.geojson")
    (out / "scene.json").write_text(json.dumps(scene.manifest(), indent=2, sort_keys=True) + "\n")
    artifacts += [out / "labels.geojson", out / "scene.json"]
    man = _manifest(args, "synth", asdict(cfg), artifacts, out)
    n_flooded = len(scene.labels.of_class("flooded_building"))
    _emit(args, {"out": str(out), "bundles": sorted(scene.bundles), "polygons": len(scene.labels.polygons),
                 "flooded_buildings": n_flooded, "run_id": man["run_id"]})
    return EXIT_OK


def cmd_prep(args):
    src = _resolve(args, args.in_dir)
    bundles = {}
    for role in ("s1_pre", "s1_post", "s1_history"):
        if (src / role / "meta.json").is_file():
            bundles[role] = read_bundle(src / role)
    stacks = prepare_radar(bundles, args.window)
    out = _resolve(args, args.out_dir) if args.out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    for name in stacks:
        if (out / name).exists() and not args.force:
            raise FileExistsError(f"{out / name} exists (use --force to overwrite)")
    artifacts = []
    for name, b in stacks.items():
        write_bundle(b, out / name)
        artifacts += [out / name / "meta.json", out / name / "data.bin"]
    _manifest(args, "prep", {"in_dir": str(src), "window": args.window}, artifacts, out, "prep_manifest.json")
    coh = {n: [float(b.data[2].min()), float(b.data[2].max())] for n, b in stacks.items()}
    _emit(args, {"out": str(out), "stacks": sorted(stacks), "coherence_range": coh})
    return EXIT_OK


def cmd_tile(args):
    file_cfg = _load_config(args)
    bundles, labels = load_dataset_dir(_resolve(args, args.dataset))
    fcfg = fusion_from_args(args, bundles, file_cfg)
    split = _split_kwargs(args, file_cfg)
    ds = build_dataset(bundles, labels, fcfg, **split)
    out = _prepare_out(args, args.out_dir)
    index = {
        "params": {k: ds.meta[k] for k in ("stride_m", "boundary", "test_side", "seed")},
        "fusion": fcfg.to_dict(),
        "tiles": [{"id": t.tile_id, "anchor": list(t.anchor), "size_m": t.size_m, "split": t.split}
                  for t in ds.tiles],
    }
    (out / "tiles.json").write_text(json.dumps(index, indent=2) + "\n")
    _manifest(args, "tile", index["params"], [out / "tiles.json"], out)
    _emit(args, {"out": str(out / "tiles.json"), **{s: ds.count(s) for s in ("train", "val", "test")}})
    return EXIT_OK


def train_config_from_args(args, file_cfg):
    keys = {f.name for f in fields(TrainConfig)}
    d = {k: v for k, v in file_cfg.items() if k in keys}
    d.update(file_cfg.get("train", {}))
    overrides = {"base_lr": args.lr, "batch_size": args.batch_size, "max_iter": args.max_iter,
                 "eval_every": args.eval_every, "checkpoint_every": args.checkpoint_every,
                 "task": args.task, "init": args.init}
    d.update({k: v for k, v in overrides.items() if v is not None})
    d["seed"] = args.seed
    if args.no_augment:
        d["augment"] = False
    return TrainConfig.from_dict(d)


def cmd_train(args):
    file_cfg = _load_config(args)
    tcfg = train_config_from_args(args, file_cfg)
    bundles, labels = load_dataset_dir(_resolve(args, args.dataset))
    fcfg = fusion_from_args(args, bundles, file_cfg)
    ds = build_dataset(bundles, labels, fcfg, **_split_kwargs(args, file_cfg))
    out = _prepare_out(args, args.out_dir)
    model = FusionNet(fcfg, args.seed)
    report = None
    if tcfg.init != "random":
        from .checkpoint import load as load_ckpt
        report = transfer_init(model, load_ckpt(_resolve(args, tcfg.init)))
        (out / "transfer_report.json").write_text(json.dumps(report, indent=2) + "\n")
    t0 = time.perf_counter()
    result = train(model, ds, tcfg, out_dir=out)
    artifacts = [out / "model.ckpt", out / "model.json", out / "metrics.jsonl"]
    artifacts += sorted(out.glob("iter_*.ckpt")) + sorted(out.glob("iter_*.json"))
    if report is not None:
        artifacts.append(out / "transfer_report.json")
    _manifest(args, "train", {"train": asdict(tcfg), "fusion": fcfg.to_dict(), "split": ds.meta}, artifacts, out)
    payload = {"out": str(out), "iterations": result.iterations, "stop_reason": result.stop_reason,
               "final_loss": result.losses[-1], "seconds": round(time.perf_counter() - t0, 2)}
    if report is not None:
        payload["unmatched"] = report["missing"] + report["unexpected"]
        payload["extended"] = report["extended"]
    _emit(args, payload)
    return EXIT_OK


def _model_dataset(args, ckpt):
    model, meta = load_model(_resolve(args, ckpt), args.seed)
    bundles, labels = load_dataset_dir(_resolve(args, args.dataset))
    fcfg = FusionConfig.from_dict(meta["fusion"])
    split = {k: meta["dataset"][k] for k in ("stride_m", "boundary", "test_side", "seed")}
    ds = build_dataset(bundles, labels, fcfg, stats=meta["input_stats"], **split)
    return model, meta, ds, bundles


def _tile_grid(ds, i, bundles):
    t = ds.tiles[i]
    from .geodata.raster import GridSpec
    n = ds.common_pixels
    crs = next(iter(bundles.values())).grid.crs
    return GridSpec(n, n, t.size_m / n, t.anchor[0], t.anchor[1], crs)


def _render_all(args, model, ds, bundles, idx, out, task):
    preds = predict(model, ds, idx)
    paths = []
    for pred, i in zip(preds, idx):
        p = out / f"pred_{ds.tiles[i].tile_id}.png"
        render_map(pred, p, grid=_tile_grid(ds, i, bundles))
        paths += [p, p.with_suffix(".json")]
    return preds, paths


def _diff_all(args, ds, bundles, idx, preds_a, preds_b, out):
    paths = []
    for a, b, i in zip(preds_a, preds_b, idx):
        p = out / f"diff_{ds.tiles[i].tile_id}.png"
        diff_overlay(a, b, p, grid=_tile_grid(ds, i, bundles))
        paths += [p, p.with_suffix(".json")]
    return paths


def cmd_eval(args):
    model, meta, ds, bundles = _model_dataset(args, args.checkpoint)
    task = args.task or meta["task"]
    idx = ds.indices(args.split)
    if not idx:
        raise CliError(f"split {args.split!r} has no tiles")
    out = _prepare_out(args, args.out_dir)
    cm = evaluate(model, ds, args.split, task)
    report = metrics_report(cm, task=task, streams="+".join(ds.sensors), split=args.split,
                            tiles=len(idx), checkpoint=str(args.checkpoint))
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    artifacts = [out / "metrics.json"]
    preds, paths = _render_all(args, model, ds, bundles, idx, out, task)
    artifacts += paths
    if args.diff:
        other, _, ds_b, _ = _model_dataset(args, args.diff)
        preds_b = predict(other, ds_b, idx)
        artifacts += _diff_all(args, ds, bundles, idx, preds, preds_b, out)
    _manifest(args, "eval", {"checkpoint": str(args.checkpoint), "split": args.split, "task": task,
                             "diff": args.diff}, artifacts, out)
    _emit(args, {"out": str(out), **report["metrics"], **report["counts"]})
    return EXIT_OK


def cmd_render(args):
    model, meta, ds, bundles = _model_dataset(args, args.checkpoint)
    idx = ds.indices(args.split)
    if not idx:
        raise CliError(f"split {args.split!r} has no tiles")
    out = _prepare_out(args, args.out_dir)
    _, paths = _render_all(args, model, ds, bundles, idx, out, meta["task"])
    _manifest(args, "render", {"checkpoint": str(args.checkpoint), "split": args.split}, paths, out)
    _emit(args, {"out": str(out), "maps": len(idx)})
    return EXIT_OK


def cmd_diff(args):
    model_a, _, ds_a, bundles = _model_dataset(args, args.checkpoint_a)
    model_b, _, ds_b, _ = _model_dataset(args, args.checkpoint_b)
    idx = ds_a.indices(args.split)
    if not idx:
        raise CliError(f"split {args.split!r} has no tiles")
    if [t.tile_id for t in ds_a.tiles] != [t.tile_id for t in ds_b.tiles]:
        raise CliError("the two checkpoints tile the dataset differently")
    out = _prepare_out(args, args.out_dir)
    paths = _diff_all(args, ds_a, bundles, idx, predict(model_a, ds_a, idx), predict(model_b, ds_b, idx), out)
    _manifest(args, "diff", {"a": str(args.checkpoint_a), "b": str(args.checkpoint_b), "split": args.split},
              paths, out)
    _emit(args, {"out": str(out), "overlays": len(idx)})
    return EXIT_OK


# ----------------------------------------------------------------- parser

def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(None), help="cap BLAS/OpenMP threads")
    parser.add_argument("--config", default=default(None), help="JSON or TOML config file")
    parser.add_argument("--json", action="store_true", default=default(False), help="machine-readable output")
    parser.add_argument("--force", action="store_true", default=default(False), help="overwrite outputs")
    parser.add_argument("--workdir", default=default("."), help="base for relative paths")


def _model_flags(p):
    p.add_argument("--streams", choices=STREAM_CHOICES, default="s2")
    p.add_argument("--tile-m", type=float, default=None, help="tile side in metres (default 320)")
    p.add_argument("--stride-m", type=float, default=None, help="tile stride (default half a tile)")
    p.add_argument("--boundary", type=float, default=None, help="map coordinate of the test/train line")
    p.add_argument("--test-side", choices=("west", "east", "south", "north"), default=None)
    p.add_argument("--tiles", default=None, help="tiles.json from the tile command")
    p.add_argument("--widths", default=None, help="encoder stage widths, e.g. 16,32,64,128")
    p.add_argument("--blocks", default=None, help="residual blocks per stage, e.g. 2,2,2,2")
    p.add_argument("--vhr-gsd", type=float, default=None, help="VHR stream resolution in metres")
    p.add_argument("--common-gsd", type=float, default=None, help="output grid resolution in metres")


def build_parser():
    parser = argparse.ArgumentParser(prog="floodfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic multi-sensor scene")
    p.add_argument("out_dir")
    for f in fields(SceneConfig):
        if f.name in ("origin_x", "origin_y", "crs"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", parents=[common], help="build radar stacks from SLC bundles")
    p.add_argument("in_dir")
    p.add_argument("--window", type=int, default=5, help="boxcar window (odd, default 5)")
    p.add_argument("--out-dir", default=None, help="defaults to the input directory")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("tile", parents=[common], help="cut and partition tiles, write tiles.json")
    p.add_argument("dataset")
    p.add_argument("out_dir")
    _model_flags(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", parents=[common], help="train a fusion model")
    p.add_argument("dataset")
    p.add_argument("out_dir")
    _model_flags(p)
    p.add_argument("--task", choices=("footprint", "flood"), default=None)
    p.add_argument("--init", default=None, help="footprint checkpoint for transfer initialization")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="metrics and maps on a split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("out_dir")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--task", choices=("footprint", "flood"), default=None)
    p.add_argument("--diff", default=None, help="second checkpoint for a diff overlay")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="prediction maps only")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("out_dir")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("diff", parents=[common], help="overlay comparing two checkpoints")
    p.add_argument("checkpoint_a")
    p.add_argument("checkpoint_b")
    p.add_argument("dataset")
    p.add_argument("out_dir")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_diff)
    return parser


def _fail(args, exc, code):
    if getattr(args, "json", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"floodfuse: error: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code not in (0, None) else EXIT_OK
    if args.threads is not None and args.threads < 1:
        return _fail(args, CliError("--threads must be >= 1"), EXIT_VALIDATION)
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(args.threads)
    else:
        limiter = nullcontext()
    np.seterr(over="ignore", under="ignore")
    try:
        with limiter:
            return args.func(args)
    except TrainingError as e:
        return _fail(args, e, EXIT_RUNTIME)
    except VALIDATION_ERRORS as e:
        return _fail(args, e, EXIT_VALIDATION)
    except Exception as e:  # noqa: BLE001 - top-level boundary
        return _fail(args, e, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
