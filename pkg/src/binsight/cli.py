"""Command-line front door for the whole toolkit.

One subcommand per stage: scene synthesis, automatic labeling, mask
cleanup, segmentation, metric reports, augmentation, dataset splits, and
the correction service. Shared numeric knobs (distance threshold, cell
size, projection resolution, inpaint kernel, resize target) come from
built-in defaults, overridden by a JSON config file, overridden by flags.
Set BINSIGHT_LOG=debug|info|warning|error for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import dataset, synth
from .autolabel import EmptyBinReference, LabelParams, auto_label, label_depth_map
from .errors import BinsightError, MissingLabels, StageError
from .rasterops import AugmentSpec, augment
from .rasterops import close as close_mask
from .rasterops import open as open_mask
from .segment import (
    BaselineSegmenter,
    ExternalSegmenter,
    ExternalSegmenterConfig,
    evaluate,
    segment_pipeline,
)

log = logging.getLogger("binsight")


@dataclass
class RunConfig:
    """Numeric defaults shared by the labeling and segmentation commands."""

    d_max_mm: float = 5.0
    s_gc_mm: float = 5.0
    r: float = 1.0
    k_inpaint: int = 5
    s_r: int = 800

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.k_inpaint % 2 == 0:
            raise ValueError("k_inpaint must be odd")


_FLAG_TO_FIELD = {
    "d_max": "d_max_mm",
    "cell_size": "s_gc_mm",
    "r": "r",
    "k_inpaint": "k_inpaint",
    "s_r": "s_r",
}


def _run_config(args) -> RunConfig:
    """Defaults < JSON config file < command-line flags."""
    values = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise BinsightError(f"{config_path}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise BinsightError(
                f"{config_path}: unknown config keys {sorted(unknown)}"
            )
        values.update(doc)
    for flag, name in _FLAG_TO_FIELD.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[name] = flag_value
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise BinsightError(f"bad configuration: {exc}") from None


def _args_record(args) -> dict:
    record = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        if isinstance(value, (str, int, float, bool, type(None))):
            record[key] = value
        elif isinstance(value, (list, tuple)):
            record[key] = list(value)
    return record


def _write_run_record(out_dir: Path, args) -> None:
    """Echo the invocation next to its outputs so runs are reproducible."""
    path = Path(out_dir) / f"{args.command}.run.json"
    with open(path, "w", newline="\n") as f:
        json.dump({"command": args.command, "args": _args_record(args)}, f, indent=2)
        f.write("\n")


def _load_reference(paths: list[str], cell_size_mm: float) -> EmptyBinReference:
    scans = [dataset.load_cloud(p) for p in paths]
    return EmptyBinReference.build(scans, cell_size_mm)


def _jobs(args) -> int:
    requested = getattr(args, "jobs", None)
    return requested if requested else (os.cpu_count() or 1)


def cmd_synth(args) -> int:
    config = synth.SceneConfig(
        bin=synth.bin_preset(args.bin),
        workpiece=synth.workpiece_preset(args.workpiece),
        count_range=(args.count_min, args.count_max),
        image_size=args.image_size,
        noise_sigma_mm=args.noise_sigma,
        dropout_prob=args.dropout,
        seed=args.seed,
    )
    manifest = synth.generate_dataset(
        [config],
        args.scenes,
        args.out,
        resolution_mm=args.resolution,
        jobs=_jobs(args),
    )
    manifest.meta["cli"] = _args_record(args)
    dataset.save_manifest(Path(args.out) / "manifest.json", manifest)
    print(f"wrote {len(manifest.scans)} scenes to {args.out}")
    return 0


def cmd_autolabel(args) -> int:
    config = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    reference = _load_reference(args.empty, config.s_gc_mm)
    filled = dataset.load_cloud(args.filled)
    params = LabelParams(d_max_mm=config.d_max_mm, cell_size_mm=config.s_gc_mm)
    labeled = auto_label(filled, reference, params, neighbor_cells=args.neighbor_cells)
    dm, mask = label_depth_map(labeled, config.r)

    stem = Path(args.filled).stem
    dataset.save_cloud(out / f"{stem}_labeled.ply", labeled)
    dataset.save_depthmap(out / f"{stem}.bdm", dm, mask)
    _write_run_record(out, args)
    workpiece = int(labeled.labels.sum())
    print(f"labeled {len(labeled)} points ({workpiece} workpiece)")
    return 0


def cmd_clean(args) -> int:
    dm, mask = dataset.load_depthmap(args.infile)
    if mask is None:
        raise MissingLabels(f"{args.infile} carries no mask to clean")
    if args.close_k:
        mask = close_mask(mask, args.close_k)
    if args.open_k:
        mask = open_mask(mask, args.open_k)
    dataset.save_depthmap(args.out, dm, mask)
    print(f"cleaned mask written to {args.out}")
    return 0


def cmd_segment(args) -> int:
    config = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cloud = dataset.load_cloud(args.infile)

    if bool(args.empty) == bool(args.model):
        raise BinsightError("pick exactly one of --empty ... or --model ...")
    external = None
    if args.empty:
        reference = _load_reference(args.empty, config.s_gc_mm)
        params = LabelParams(d_max_mm=config.d_max_mm, cell_size_mm=config.s_gc_mm)
        segmenter = BaselineSegmenter(
            reference, params, neighbor_cells=args.neighbor_cells
        )
    else:
        endpoint = ExternalSegmenterConfig(
            tuple(shlex.split(args.model)), timeout_s=args.timeout
        )
        external = segmenter = ExternalSegmenter(endpoint)

    trace: dict = {}
    try:
        pc_w, pc_n, mask, metrics = segment_pipeline(
            cloud,
            segmenter,
            s_r=config.s_r,
            k_inpaint=config.k_inpaint,
            r=config.r,
            trace=trace,
        )
    finally:
        if external is not None:
            external.close()

    dm = trace["project"][0]
    dataset.save_cloud(out / "pc_w.ply", pc_w)
    dataset.save_cloud(out / "pc_n.ply", pc_n)
    dataset.save_depthmap(out / "mask.bdm", dm, mask)
    _write_run_record(out, args)
    if metrics is not None:
        report = {
            "pixel_accuracy": metrics.pixel_accuracy,
            "iou_workpiece": metrics.iou_workpiece,
            "iou_background": metrics.iou_background,
            "mean_iou": metrics.mean_iou,
        }
        with open(out / "metrics.json", "w", newline="\n") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        print(json.dumps(report))
    else:
        print(f"split {len(pc_w)} workpiece / {len(pc_n)} other points")
    return 0


def _eval_one(name: str, pred_dir: Path, gt_dir: Path) -> dict:
    _, pred = dataset.load_depthmap(pred_dir / name)
    _, gt = dataset.load_depthmap(gt_dir / name)
    if pred is None or gt is None:
        raise MissingLabels(f"{name} lacks a mask in one of the directories")
    m = evaluate(pred, gt)
    return {
        "pixel_accuracy": m.pixel_accuracy,
        "iou_workpiece": m.iou_workpiece,
        "iou_background": m.iou_background,
        "mean_iou": m.mean_iou,
    }


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_names = {p.name for p in pred_dir.glob("*.bdm")}
    gt_names = {p.name for p in gt_dir.glob("*.bdm")}
    names = sorted(pred_names & gt_names)
    if not names:
        raise BinsightError("no .bdm files common to both directories")
    lonely = sorted((pred_names ^ gt_names))
    if lonely:
        raise BinsightError(f"unmatched depth maps: {lonely}")

    jobs = _jobs(args)
    if jobs > 1 and len(names) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda n: _eval_one(n, pred_dir, gt_dir), names))
    else:
        rows = [_eval_one(n, pred_dir, gt_dir) for n in names]

    scans = dict(zip(names, rows))
    keys = ("pixel_accuracy", "iou_workpiece", "iou_background", "mean_iou")
    mean = {k: sum(row[k] for row in rows) / len(rows) for k in keys}
    report = {"scans": scans, "mean": mean}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_augment(args) -> int:
    dm, mask = dataset.load_depthmap(args.infile)
    if mask is None:
        raise MissingLabels(f"{args.infile} carries no mask to augment")
    spec = AugmentSpec(
        flip_h=args.flip_h,
        flip_v=args.flip_v,
        rotation_deg=args.rot,
        scale=args.scale,
    )
    dm_a, mask_a = augment(dm, mask, spec)
    dataset.save_depthmap(args.out, dm_a, mask_a)
    print(f"augmented frame written to {args.out}")
    return 0


def cmd_split(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    out = dataset.split_dataset(
        manifest, (args.train, args.val, args.test), seed=args.seed
    )
    dataset.save_manifest(args.manifest, out)
    counts = {s: 0 for s in dataset.SPLITS}
    for entry in out.scans:
        counts[entry.split] += 1
    print(json.dumps(counts))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.dataset), host=args.host, port=args.port)
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--d-max", dest="d_max", type=float, default=None,
                   help="distance threshold in mm (default 5)")
    p.add_argument("--cell-size", dest="cell_size", type=float, default=None,
                   help="grid cell size in mm (default 5)")
    p.add_argument("--r", dest="r", type=float, default=None,
                   help="projection resolution in mm per pixel (default 1)")
    p.add_argument("--k-inpaint", dest="k_inpaint", type=int, default=None,
                   help="inpainting kernel size, odd (default 5)")
    p.add_argument("--s-r", dest="s_r", type=int, default=None,
                   help="square resize target in pixels (default 800)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binsight",
        description="Point-cloud segmentation toolkit for bin picking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labeled scenes")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bin", default="medium_solid", choices=sorted(synth.BIN_PRESETS))
    p.add_argument("--workpiece", default="disc_m",
                   choices=sorted(synth.WORKPIECE_PRESETS))
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--noise-sigma", type=float, default=synth.DEFAULT_NOISE_SIGMA_MM)
    p.add_argument("--dropout", type=float, default=synth.DEFAULT_DROPOUT_PROB)
    p.add_argument("--count-min", type=int, default=30)
    p.add_argument("--count-max", type=int, default=130)
    p.add_argument("--resolution", type=float, default=2.0,
                   help="depth-map resolution in mm per pixel")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("autolabel", help="label a filled scan against empty scans")
    p.add_argument("--empty", nargs="+", required=True, metavar="PLY")
    p.add_argument("--filled", required=True, metavar="PLY")
    p.add_argument("--out", required=True)
    p.add_argument("--neighbor-cells", action="store_true",
                   help="also search the 8 surrounding grid cells")
    _add_config_flags(p)
    p.set_defaults(func=cmd_autolabel)

    p = sub.add_parser("clean", help="morphological cleanup of a stored mask")
    p.add_argument("--in", dest="infile", required=True, metavar="BDM")
    p.add_argument("--out", required=True, metavar="BDM")
    p.add_argument("--close-k", type=int, default=3,
                   help="closing kernel, 0 to skip (default 3)")
    p.add_argument("--open-k", type=int, default=0,
                   help="opening kernel, 0 to skip (default 0)")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("segment", help="run the full segmentation pipeline")
    p.add_argument("--in", dest="infile", required=True, metavar="PLY")
    p.add_argument("--out", required=True)
    p.add_argument("--empty", nargs="*", default=[], metavar="PLY",
                   help="empty-bin scans for the reference-based segmenter")
    p.add_argument("--model", default="",
                   help="external segmenter command line")
    p.add_argument("--timeout", type=float, default=10.0,
                   help="external segmenter timeout in seconds")
    p.add_argument("--neighbor-cells", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, metavar="DIR")
    p.add_argument("--gt", required=True, metavar="DIR")
    p.add_argument("--out", default="", metavar="JSON")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="flip/rotate/scale a stored frame")
    p.add_argument("--in", dest="infile", required=True, metavar="BDM")
    p.add_argument("--out", required=True, metavar="BDM")
    p.add_argument("--flip-h", action="store_true")
    p.add_argument("--flip-v", action="store_true")
    p.add_argument("--rot", type=int, default=0, choices=(0, 90, 180, 270))
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="assign train/val/test splits in a manifest")
    p.add_argument("--manifest", required=True, metavar="JSON")
    p.add_argument("--train", type=float, default=0.8)
    p.add_argument("--val", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("serve", help="run the label-correction HTTP service")
    p.add_argument("--dataset", required=True, metavar="DIR")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("BINSIGHT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        _report_failure(args.command, str(exc), stage=exc.stage)
    except BinsightError as exc:
        _report_failure(args.command, str(exc))
    except OSError as exc:
        _report_failure(args.command, str(exc), file=getattr(exc, "filename", None))
    except ValueError as exc:
        _report_failure(args.command, str(exc))
    return 1


def _report_failure(command: str, message: str, **context) -> None:
    doc = {"error": message, "command": command}
    doc.update({k: v for k, v in context.items() if v})
    print(json.dumps(doc), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
