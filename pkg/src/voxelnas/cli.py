"""Command-line pipeline: synth, search, shortlist, train, cam.

Every command resolves its full configuration (defaults included), writes it
to ``run_config.json`` in the output directory before doing any work, and is
reproducible end to end under a fixed ``--seed``. Exit codes: 0 success, 2
argument/config errors, 1 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cam as cam_mod
from . import dnas
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Manifest,
    ScanDataset,
    TransformConfig,
    load_volume,
    preprocess,
    synth_dataset,
)
from .errors import ArgumentError, ConfigError, FormatError, VoxelNasError
from .metrics import CSV_HEADER, format_csv_row, format_report
from .numerics import active_backend
from .search_space import (
    CHANNEL_PRESETS,
    TINY_CONFIG,
    ArchDescriptor,
    SupernetConfig,
    build_supernet,
    count_search_space,
    model_size_mb,
)

log = logging.getLogger("voxelnas")


def _write_snapshot(out_dir: Path, payload: dict) -> None:
    """Echo every resolved setting before any work starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_config.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    log.info("config snapshot: %s", path)


def _transform_from_args(args) -> TransformConfig:
    return TransformConfig(
        target_slices=args.slices,
        resize=(args.resize, args.resize),
        center_crop=(args.crop, args.crop),
    )


def _add_transform_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--slices", type=int, default=16, help="slices sampled per scan")
    p.add_argument("--resize", type=int, default=64, help="per-slice resize (square)")
    p.add_argument("--crop", type=int, default=64, help="center crop after resize (square)")


def _supernet_config(preset: str, num_cells: int | None, num_classes: int,
                     input_shape: tuple[int, int, int]) -> SupernetConfig:
    if preset == "tiny":
        base = TINY_CONFIG
        blocks, channels = base.blocks_per_cell, base.channels_per_cell
        stride2, stem = base.stride2_cells, base.stem_channels
    else:
        blocks = (4, 4, 4, 4, 4, 1)
        channels = CHANNEL_PRESETS[preset]
        stride2 = (1, 2, 3, 4)
        stem = 32
    cells = len(blocks) if num_cells is None else num_cells
    if not 1 <= cells <= len(blocks):
        raise ArgumentError(f"--num-cells must lie in [1, {len(blocks)}], got {cells}")
    return SupernetConfig(
        num_cells=cells,
        blocks_per_cell=blocks[:cells],
        channels_per_cell=channels[:cells],
        stride2_cells=tuple(i for i in stride2 if i < cells),
        stem_channels=stem,
        num_classes=num_classes,
        input_shape=input_shape,
    )


def _load_run_config(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(
            f"run config {path} not found (pass --run-config explicitly)"
        ) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad run config ({exc})") from None


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    shape = tuple(int(v) for v in args.shape.split(","))
    if len(shape) != 3:
        raise ArgumentError(f"--shape wants D,H,W, got {args.shape!r}")
    _write_snapshot(out, {
        "command": "synth",
        "classes": args.classes,
        "per_class": args.per_class,
        "shape": list(shape),
        "seed": args.seed,
        "out": str(out),
    })
    manifest, truth = synth_dataset(args.per_class, args.classes, shape, args.seed, out)
    n_train = len(manifest.split("train"))
    n_test = len(manifest.split("test"))
    log.info("wrote %d volumes (%d train / %d test) to %s",
             len(manifest.entries), n_train, n_test, out)
    return 0


def cmd_search(args) -> int:
    out = Path(args.out)
    dataset = ScanDataset.open(args.manifest, _transform_from_args(args))
    config = _supernet_config(
        args.preset, args.num_cells, dataset.manifest.num_classes,
        (args.slices, args.crop, args.crop),
    )
    search_cfg = dnas.SearchConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        tau_start=args.tau_start,
        tau_end=args.tau_end,
        alpha_lr=args.alpha_lr,
        weight_lr=args.weight_lr,
        weight_momentum=args.weight_momentum,
        weight_decay=args.weight_decay,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    _write_snapshot(out, {
        "command": "search",
        "manifest": str(args.manifest),
        "out": str(out),
        "seed": args.seed,
        "preset": args.preset,
        "backend": active_backend(),
        "supernet": config.to_dict(),
        "transform": dataset.transform.to_dict(),
        "search": search_cfg.to_dict(),
    })
    log.info("search space holds %d architectures over %d positions",
             count_search_space(config), config.num_positions)
    net = build_supernet(config, args.seed)
    history = dnas.run_search(net, dataset, search_cfg, log_fn=log.info)
    history.save(out / "history.jsonl")
    best = dnas.select_top_k(history, 1)[0]
    best.save(out / "best_arch.json")
    log.info("history: %s", out / "history.jsonl")
    log.info("best architecture (val_acc %.4f): %s",
             best.provenance.get("val_accuracy", float("nan")), out / "best_arch.json")
    return 0


def cmd_shortlist(args) -> int:
    out = Path(args.out)
    history_path = Path(args.history)
    run_config_path = (
        Path(args.run_config) if args.run_config else history_path.parent / "run_config.json"
    )
    snapshot = _load_run_config(run_config_path)
    config = SupernetConfig.from_dict(snapshot["supernet"])
    transform = TransformConfig.from_dict(snapshot["transform"])
    _write_snapshot(out, {
        "command": "shortlist",
        "history": str(history_path),
        "manifest": str(args.manifest),
        "out": str(out),
        "run_config": str(run_config_path),
        "top_k": args.top_k,
        "batches": args.batches,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "supernet": config.to_dict(),
        "transform": transform.to_dict(),
    })
    history = dnas.SearchHistory.load(history_path, config)
    dataset = ScanDataset.open(args.manifest, transform)
    candidates = dnas.select_top_k(history, args.top_k)
    if len(candidates) == 1:
        winner = candidates[0]
        log.info("single candidate, skipping comparative training")
    else:
        winner = dnas.shortlist_train(
            candidates, dataset, args.batches,
            seed=args.seed, batch_size=args.batch_size, log_fn=log.info,
        )
    winner.save(out / "winner.json")
    log.info("winner: %s", out / "winner.json")
    return 0


def _write_metrics(out: Path, report) -> None:
    with open(out / "metrics.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report))
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n" + format_csv_row(report) + "\n")
    log.info("metrics:\n%s", format_report(report).rstrip())


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.eval_only and not args.checkpoint:
        raise ArgumentError("--eval-only needs --checkpoint")
    if not args.eval_only and not args.arch:
        raise ArgumentError("training needs --arch (or use --eval-only with --checkpoint)")
    transform = _transform_from_args(args)
    _write_snapshot(out, {
        "command": "train",
        "arch": str(args.arch) if args.arch else None,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "eval_only": args.eval_only,
        "manifest": str(args.manifest),
        "out": str(out),
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "positive_class": args.positive_class,
        "seed": args.seed,
        "backend": active_backend(),
        "transform": transform.to_dict(),
    })
    dataset = ScanDataset.open(args.manifest, transform)

    if args.eval_only:
        model, arch = load_checkpoint(args.checkpoint)
        test_entries = dataset.entries("test")
        if not test_entries:
            raise ConfigError("manifest has no test entries")
        model.train(False)
        preds, labels, _ = dnas._predict(model, dataset, test_entries, args.batch_size)
        from .metrics import compute_metrics, confusion, per_class_table

        counts = confusion(preds, labels, args.positive_class)
        report = compute_metrics(
            counts, int((preds == labels).sum()), len(labels),
            model_size=model_size_mb(model),
            per_class=per_class_table(preds, labels, arch.config.num_classes),
        )
        _write_metrics(out, report)
        return 0

    arch = ArchDescriptor.load(args.arch)
    result = dnas.train_child(
        arch, dataset, args.epochs, args.seed,
        batch_size=args.batch_size, positive_class=args.positive_class,
        log_fn=log.info,
    )
    save_checkpoint(out / "checkpoint.bin", result.model, arch)
    _write_metrics(out, result.report)
    log.info("checkpoint: %s", out / "checkpoint.bin")
    return 0


def cmd_cam(args) -> int:
    out = Path(args.out)
    transform = _transform_from_args(args)
    _write_snapshot(out, {
        "command": "cam",
        "checkpoint": str(args.checkpoint),
        "volumes": [str(v) for v in args.volume],
        "out": str(out),
        "class_index": args.class_index,
        "seed": args.seed,
        "transform": transform.to_dict(),
    })
    model, arch = load_checkpoint(args.checkpoint)
    if args.class_index is not None and not 0 <= args.class_index < arch.config.num_classes:
        raise ArgumentError(
            f"--class {args.class_index} outside [0, {arch.config.num_classes})"
        )
    for vol_path in args.volume:
        volume = load_volume(vol_path)
        x = preprocess(volume, transform, split="test")
        capture = cam_mod.capture_features(model, x, volume_id=volume.id)
        class_index = (
            args.class_index if args.class_index is not None else capture.predicted_class
        )
        amap = cam_mod.compute_cam(capture, class_index)
        amap = cam_mod.upsample_cam(amap, x.shape[1:])
        paths = cam_mod.export_overlays(amap, x, out)
        log.info("%s: class %d, %d overlays in %s", volume.id, class_index, len(paths), out)
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelnas",
        description="differentiable architecture search for volumetric classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--shape", type=str, default="16,16,16", help="volume dims D,H,W")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("search", help="run the architecture search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--preset", choices=("small", "large", "tiny"), default="small")
    p.add_argument("--num-cells", type=int, default=None,
                   help="use only the first N cells of the preset")
    p.add_argument("--tau-start", type=float, default=5.0)
    p.add_argument("--tau-end", type=float, default=0.5)
    p.add_argument("--alpha-lr", type=float, default=1e-3)
    p.add_argument("--weight-lr", type=float, default=1e-3)
    p.add_argument("--weight-momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=3e-4)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("shortlist", help="retrain the top-k briefly and pick a winner")
    p.add_argument("--history", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--run-config", default=None,
                   help="search snapshot (default: run_config.json next to the history)")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--batches", type=int, default=50, help="training batches per candidate")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_shortlist)

    p = sub.add_parser("train", help="retrain one architecture and evaluate it")
    p.add_argument("--arch", default=None, help="architecture descriptor file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--positive-class", type=int, default=1)
    p.add_argument("--eval-only", action="store_true",
                   help="recompute metrics from --checkpoint without training")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cam", help="export class-activation overlays for volumes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", action="append", required=True,
                   help="volume file (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None,
                   help="class to map (default: the predicted class)")
    p.add_argument("--seed", type=int, default=0)
    _add_transform_flags(p)
    p.set_defaults(func=cmd_cam)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, ConfigError) as exc:
        log.error("%s", exc)
        return 2
    except (VoxelNasError, OSError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
