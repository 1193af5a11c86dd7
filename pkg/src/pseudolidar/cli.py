"""Batch front-end: ``pseudolidar {convert,fit,eval,depth-diag,selftest}``.

Exit codes: 0 success, 1 config error, 2 frame failures, 3 evaluation-input
mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import kitti_io
from .cloud import build_pseudolidar_detailed, depth_to_points, ChannelMode
from .config import ConfigError, RunConfig, load_config
from .errors import MissingFeatureRaster
from .fitter import compute_size_priors, exp0_detect
from .geometry import PointCloud
from .metrics import DepthDiagReport, depth_box_outcomes, evaluate

log = logging.getLogger("pseudolidar")

EXIT_OK, EXIT_CONFIG, EXIT_FRAMES, EXIT_MISMATCH = 0, 1, 2, 3


def _log_frame(frame_id: str, stage: str, t0: float, **fields) -> None:
    rec = {"frame": frame_id, "stage": stage, "seconds": round(time.perf_counter() - t0, 4), **fields}
    log.info(json.dumps(rec, sort_keys=True))


def _read_calib(cfg: RunConfig, fid: str) -> kitti_io.Calibration:
    return kitti_io.parse_calibration((cfg.calib_dir / f"{fid}.txt").read_text())


def _read_labels(path: Path, require_score: bool = False) -> list[kitti_io.LabelRecord]:
    return kitti_io.parse_labels(path.read_text(), require_score=require_score)


def _map_frames(cfg: RunConfig, fn, frame_ids):
    """Run ``fn(cfg, fid)`` per frame; returns [(fid, result | exception)] in split order."""
    if cfg.jobs == 1:
        out = []
        for fid in frame_ids:
            try:
                out.append((fid, fn(cfg, fid)))
            except Exception as exc:  # per-frame failures are reported, not fatal
                out.append((fid, exc))
        return out
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = [(fid, pool.submit(fn, cfg, fid)) for fid in frame_ids]
        out = []
        for fid, fut in futures:
            try:
                out.append((fid, fut.result()))
            except Exception as exc:
                out.append((fid, exc))
        return out


def _report_failures(cfg: RunConfig, results) -> int:
    failed = [(fid, r) for fid, r in results if isinstance(r, Exception)]
    for fid, exc in failed:
        log.error(json.dumps({"frame": fid, "error": type(exc).__name__, "message": str(exc)}))
    if failed:
        print(f"{len(failed)}/{len(results)} frames failed", file=sys.stderr)
        for fid, exc in failed[:20]:
            print(f"  {fid}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if not cfg.tolerate_frame_errors:
            return EXIT_FRAMES
    return EXIT_OK


# --- convert -----------------------------------------------------------------

def _convert_frame(cfg: RunConfig, fid: str) -> dict:
    t0 = time.perf_counter()
    v = cfg.variant
    calib = _read_calib(cfg, fid)
    depth = kitti_io.read_depth_png((cfg.depth_dir / f"{fid}.png").read_bytes())

    conf = None
    if v.needs_confidence:
        path = cfg.conf_dir / f"{fid}.png"
        if not path.exists():
            raise MissingFeatureRaster(f"no confidence raster {path}")
        conf = kitti_io.read_confidence_png(path.read_bytes())
    if v.channel_mode is ChannelMode.GRAYSCALE:
        path = cfg.image_dir / f"{fid}.png"
        if not path.exists():
            raise MissingFeatureRaster(f"no image {path}")
        feature = kitti_io.rgb_to_grayscale(kitti_io.read_rgb_png(path.read_bytes()))
    elif v.channel_mode is ChannelMode.MASK_CONFIDENCE:
        feature = conf
    else:
        feature = None

    res = build_pseudolidar_detailed(depth, feature, calib, v, confidence=conf, frame_id=int(fid))
    (cfg.cloud_dir / f"{fid}.bin").write_bytes(kitti_io.write_pointcloud_bin(res.cloud))
    _log_frame(fid, "convert", t0, points=len(res.cloud), valid_depth=res.stats["n_valid_depth"])
    return res.stats


def cmd_convert(cfg: RunConfig) -> int:
    cfg.cloud_dir.mkdir(parents=True, exist_ok=True)
    frame_ids = cfg.frame_ids()
    results = _map_frames(cfg, _convert_frame, frame_ids)
    chash = cfg.config_hash()
    lines = []
    for fid, stats in results:
        if isinstance(stats, Exception):
            continue
        lines.append(json.dumps({
            "frame_id": fid, "variant": cfg.variant_name, "seed": cfg.seed,
            "frame_seed": cfg.seed ^ int(fid), "point_count": stats["n_points"],
            "stats": stats, "variant_config": cfg.variant.to_dict(),
            "budget_after_selection": True, "config_hash": chash,
        }, sort_keys=True))
    (cfg.cloud_dir / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    return _report_failures(cfg, results)


# --- fit ---------------------------------------------------------------------

def _fit_frame(cfg: RunConfig, fid: str, priors=None) -> int:
    t0 = time.perf_counter()
    calib = _read_calib(cfg, fid)
    labels = _read_labels(cfg.label_dir / f"{fid}.txt")
    depth = kitti_io.read_depth_png((cfg.depth_dir / f"{fid}.png").read_bytes())
    xyz, _ = depth_to_points(depth, calib, cfg.variant.depth_min, cfg.variant.depth_max)
    pts = np.zeros((len(xyz), 4), dtype=np.float32)
    pts[:, :3] = xyz
    cloud = PointCloud(pts, "velodyne")
    dets = exp0_detect(cloud, labels, calib, priors, cfg.fitter, image_size=(depth.width, depth.height))
    (cfg.det_dir / f"{fid}.txt").write_text(kitti_io.serialize_labels(dets))
    _log_frame(fid, "fit", t0, points=len(cloud), detections=len(dets))
    return len(dets)


class _FitWorker:
    def __init__(self, priors):
        self.priors = priors

    def __call__(self, cfg, fid):
        return _fit_frame(cfg, fid, self.priors)


def cmd_fit(cfg: RunConfig) -> int:
    cfg.det_dir.mkdir(parents=True, exist_ok=True)
    prior_ids = cfg.frame_ids(cfg.train_split_file) if cfg.train_split_file else cfg.frame_ids()
    train_labels = []
    for fid in prior_ids:
        train_labels.extend(_read_labels(cfg.label_dir / f"{fid}.txt"))
    priors = compute_size_priors(train_labels)
    (cfg.output_dir / "size_priors.json").write_text(json.dumps(
        {"means_hwl": priors.means, "counts": priors.counts, "config_hash": cfg.config_hash()},
        sort_keys=True, indent=2) + "\n")
    results = _map_frames(cfg, _FitWorker(priors), cfg.frame_ids())
    return _report_failures(cfg, results)


# --- eval / depth-diag -------------------------------------------------------

def _read_detections(path: Path) -> list[kitti_io.LabelRecord]:
    text = path.read_text()
    first = next((line.split() for line in text.splitlines() if line.strip()), None)
    if first is not None and len(first) == 15:
        # a GT file passed as detections has no score column; rank every box as certain
        return [dataclasses.replace(d, score=1.0) for d in kitti_io.parse_labels(text)]
    return kitti_io.parse_labels(text, require_score=True)


def cmd_eval(cfg: RunConfig) -> int:
    frame_ids = cfg.frame_ids()
    missing = [f for f in frame_ids if not (cfg.det_dir / f"{f}.txt").exists()
               or not (cfg.label_dir / f"{f}.txt").exists()]
    if missing:
        print(f"evaluation inputs missing for {len(missing)} frames, e.g. {missing[:5]}", file=sys.stderr)
        return EXIT_MISMATCH
    gt = [_read_labels(cfg.label_dir / f"{f}.txt") for f in frame_ids]
    try:
        det = [_read_detections(cfg.det_dir / f"{f}.txt") for f in frame_ids]
    except ValueError as exc:
        print(f"bad detection file: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    report = evaluate(gt, det, cfg.eval.classes, cfg.eval.iou_thresholds,
                      cfg.eval.dontcare_mode, config_hash=cfg.config_hash())
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "eval_report.txt").write_text(report.to_table())
    (cfg.output_dir / "eval_report.jsonl").write_text(report.to_jsonl())
    print(report.to_table(), end="")
    return EXIT_OK


def _depth_frame(cfg: RunConfig, fid: str):
    labels = _read_labels(cfg.label_dir / f"{fid}.txt")
    depth = kitti_io.read_depth_png((cfg.depth_dir / f"{fid}.png").read_bytes())
    return depth_box_outcomes(labels, depth, cfg.eval.depth_threshold_m,
                              depth_min=cfg.variant.depth_min, depth_max=cfg.variant.depth_max)


def cmd_depth_diag(cfg: RunConfig) -> int:
    results = _map_frames(cfg, _depth_frame, cfg.frame_ids())
    outcomes = [o for _, r in results if not isinstance(r, Exception) for o in r]
    report = DepthDiagReport.from_outcomes(outcomes, buckets=cfg.eval.depth_buckets,
                                           threshold_m=cfg.eval.depth_threshold_m,
                                           config_hash=cfg.config_hash())
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "depth_diag.txt").write_text(report.to_table())
    (cfg.output_dir / "depth_diag.jsonl").write_text(report.to_jsonl())
    (cfg.output_dir / "depth_diag.csv").write_text(report.to_csv())
    print(report.to_table(), end="")
    return _report_failures(cfg, results)


def cmd_selftest(quick: bool = True) -> int:
    from .selftest import run_selftest

    results = run_selftest(quick=quick)
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FRAMES


# --- argument parsing --------------------------------------------------------

COMMANDS = {
    "convert": cmd_convert,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "depth-diag": cmd_depth_diag,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudolidar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON run config")
        p.add_argument("--dataset-root")
        p.add_argument("--split", help="split file (one 6-digit frame id per line)")
        p.add_argument("--variant", choices=["exp2", "exp4", "exp5", "exp7"])
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--tolerate-frame-errors", action="store_true", default=None)
        p.add_argument("--dontcare-mode", choices=["official", "simple"])
        p.add_argument("--detections", help="detection directory for eval")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("selftest")
    p.add_argument("--full", action="store_true", help="acceptance-size oracle runs")
    return parser


def _abs(value):
    return None if value is None else str(Path(value).resolve())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(quick=not args.full)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {
        "dataset_root": _abs(args.dataset_root),
        "split_file": _abs(args.split),
        "variant": args.variant,
        "seed": args.seed,
        "jobs": args.jobs,
        "tolerate_frame_errors": args.tolerate_frame_errors,
        "dontcare_mode": args.dontcare_mode,
        "detections_dir": _abs(args.detections),
        "output_dir": _abs(args.out),
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
