"""Acceptance checks, one per criterion, at their stated tolerances.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion
is printed in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import dataclasses
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from pseudolidar import kitti_io, synthetic
from pseudolidar.cloud import VARIANTS, build_pseudolidar_detailed
from pseudolidar.errors import NoGroundTruth
from pseudolidar.fitter import SizePriors, exp0_detect, pca_yaw
from pseudolidar.geometry import (
    Box3D, PointCloud, box_cam_to_velo, cam_to_velo_xyz, convex_polygon_intersection_area, iou_3d,
    iou_bev, velo_to_cam_xyz,
)
from pseudolidar.kitti_io import LabelRecord, ScalarRaster
from pseudolidar.metrics import (
    DIFFICULTIES, KITTI_CRITERIA, DepthDiagReport, ap40, depth_box_outcomes, label_to_box,
)
from pseudolidar.oracles import mc_iou, reference_ap40

RESULTS: dict = {}

AP_CELLS = [(d, t, m) for d in DIFFICULTIES for t in (0.5, 0.7) for m in ("bev", "3d")]


def _ap_or_none(gt, det, diff, thr, metric, mode="official"):
    try:
        return ap40(gt, det, "Car", diff, thr, metric, mode)
    except NoGroundTruth:
        return None


# --- 1: IoU vs Monte-Carlo ----------------------------------------------------

def criterion_1():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        a, b = synthetic.random_box_pair(rng, "velodyne" if i % 2 else "camera")
        m_bev, m_3d = mc_iou(a, b, log2_n=20, seed=i)
        worst = max(worst, abs(m_bev - iou_bev(a, b)), abs(m_3d - iou_3d(a, b)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 2e-3 and elapsed < 60.0
    return ok, f"1000 pairs, 2^20 samples each: max |IoU - MC| = {worst:.2e} (tol 2e-3), {elapsed:.1f} s (limit 60 s)"


# --- 2: analytic fixtures ----------------------------------------------------

def criterion_2():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    rot = (sq - 0.5) @ np.array([[c, -s], [s, c]]).T + 0.5
    octagon = convex_polygon_intersection_area(sq, rot)
    err_oct = abs(octagon - 2 * (math.sqrt(2) - 1))
    a = Box3D((3.0, -2.0, 0.0), (4.0, 2.0, 2.0), 0.7, "velodyne")
    b = Box3D((3.0, -2.0, 1.0), (4.0, 2.0, 2.0), 0.7, "velodyne")
    err_half = abs(iou_3d(a, b) - 1.0 / 3.0)
    ok = err_oct <= 1e-6 and err_half <= 1e-9
    return ok, f"octagon error {err_oct:.1e} (tol 1e-6), half-height 3D IoU error {err_half:.1e} (tol 1e-9)"


# --- 3: AP40 reference equivalence ------------------------------------------

def criterion_3():
    rng = np.random.default_rng(777)
    gt, det = [], []
    for _ in range(100):
        g, d = synthetic.random_scene(rng, max_boxes=20)
        gt.append(g)
        det.append(d)

    worst, cells, defined_mismatch = 0.0, 0, 0
    for mode in ("official", "simple"):
        for diff, thr, metric in AP_CELLS:
            ref = reference_ap40(gt, det, "Car", diff, thr, metric, mode, KITTI_CRITERIA)
            got = _ap_or_none(gt, det, diff, thr, metric, mode)
            if (ref is None) != (got is None):
                defined_mismatch += 1
            elif ref is not None:
                worst = max(worst, abs(ref - got))
                cells += 1

    perfect = [_ap_or_none(gt, [synthetic.gt_as_detections(g) for g in gt], *cell) for cell in AP_CELLS]
    perfect = [v for v in perfect if v is not None]
    perfect_ok = bool(perfect) and all(v == 100.0 for v in perfect)

    rescaled = [[dataclasses.replace(d, score=d.score ** 3 * 0.5 + 0.01) for d in f] for f in det]
    monotone_ok = all(
        _ap_or_none(gt, det, *cell) == _ap_or_none(gt, rescaled, *cell) for cell in AP_CELLS
    )
    ok = worst <= 1e-9 and defined_mismatch == 0 and cells > 0 and perfect_ok and monotone_ok
    return ok, (f"max |AP - reference| = {worst:.1e} over {cells} cells (tol 1e-9); "
                f"perfect detector 100.0 in {len(perfect)}/{len(perfect)} defined cells: {perfect_ok}; "
                f"score rescaling invariant: {monotone_ok}")


# --- 4: pseudo-LiDAR construction invariants ---------------------------------

def _depth_rasters(rng):
    calib = synthetic.kitti_calibration()
    for _ in range(3):
        boxes = synthetic.scene_car_boxes(rng, 4, calib)
        depth = synthetic.render_depth(calib, synthetic.KITTI_IMAGE_SIZE, boxes)
        depth = depth + rng.normal(0, 0.5, depth.shape) * (depth > 0)
        yield calib, np.clip(depth, 0.0, None)
    for shape in ((375, 1242), (60, 90), (5, 7)):
        calib = synthetic.random_calibration(rng)
        yield calib, rng.uniform(0.0, 90.0, shape)
    # boundary values exactly on the filter limits
    calib = synthetic.random_calibration(rng)
    yield calib, rng.choice([0.0, 1.0, 1.0 + 1e-6, 30.0, 60.0 - 1e-5, 60.0, 75.0], size=(50, 50))


def criterion_4():
    rng = np.random.default_rng(44)
    failures = []
    n_cases = 0
    for k, (calib, values) in enumerate(_depth_rasters(rng)):
        depth = ScalarRaster(values, "depth_m")
        gray = ScalarRaster(rng.random(values.shape), "grayscale01")
        conf = ScalarRaster(np.where(rng.random(values.shape) < 0.2, rng.random(values.shape), 0.0),
                            "confidence01")
        runs = {
            "exp2": build_pseudolidar_detailed(depth, gray, calib, VARIANTS["exp2"], frame_id=k),
            "exp7": build_pseudolidar_detailed(depth, gray, calib, VARIANTS["exp7"], frame_id=k),
            "exp4": build_pseudolidar_detailed(depth, conf, calib, VARIANTS["exp4"], frame_id=k),
            "exp5": build_pseudolidar_detailed(depth, gray, calib, VARIANTS["exp5"], confidence=conf, frame_id=k),
        }
        n_cases += 1
        if runs["exp2"].cloud.xyz.tobytes() != runs["exp7"].cloud.xyz.tobytes():
            failures.append(f"case {k}: exp2/exp7 coordinates differ")
        for name, res in runs.items():
            cfg = VARIANTS[name]
            inten = res.cloud.intensity
            z = values.ravel()[res.pixel_index]
            if len(res.cloud) != cfg.num_points:
                failures.append(f"case {k} {name}: {len(res.cloud)} points != {cfg.num_points}")
            if not np.all((inten >= 0.0) & (inten <= 1.0)):
                failures.append(f"case {k} {name}: intensity outside [0, 1]")
            if not np.all((z > 1.0) & (z < 60.0)):
                failures.append(f"case {k} {name}: depth outside (1, 60)")
    ok = not failures
    detail = f"{n_cases} rasters x 4 variants, budgets 16384/40000"
    return ok, detail + ("" if ok else f"; {failures[:3]}")


# --- 5: transform round trip ------------------------------------------------

def criterion_5():
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(10):
        calib = synthetic.random_calibration(rng)
        p = rng.uniform(-80.0, 80.0, (10_000, 3))
        worst = max(worst, float(np.abs(cam_to_velo_xyz(velo_to_cam_xyz(p, calib), calib) - p).max()))
    return worst < 1e-5, f"10 calibrations x 1e4 points: max deviation {worst:.2e} m (tol 1e-5)"


# --- 6: fitter on a synthetic scene -------------------------------------------

def criterion_6():
    calib = synthetic.kitti_calibration()
    pts, gt_velo, label = synthetic.car_scene_cloud(calib, yaw_velo=0.3, n=10_000, seed=6)
    cloud = PointCloud(np.column_stack([pts, np.zeros(len(pts))]), "velodyne")
    priors = SizePriors({"Car": tuple(label.dims)})
    det = exp0_detect(cloud, [label], calib, priors, image_size=synthetic.KITTI_IMAGE_SIZE)
    iou = iou_3d(box_cam_to_velo(label_to_box(det[0]), calib), gt_velo) if det else 0.0

    rng = np.random.default_rng(6)
    local = rng.normal(0.0, [2.0, 0.1], (10_000, 2))
    c, s = math.cos(0.3), math.sin(0.3)
    gauss_err = abs(math.remainder(pca_yaw(local @ np.array([[c, -s], [s, c]]).T).yaw - 0.3, math.pi))
    cluster_err = abs(math.remainder(pca_yaw(pts[:, :2]).yaw - 0.3, math.pi))
    ok = len(det) == 1 and iou >= 0.7 and gauss_err <= 0.02 and cluster_err <= 0.02
    return ok, (f"exp0 3D IoU {iou:.3f} (min 0.7); pca_yaw error at 0.3 rad: "
                f"gaussian {gauss_err:.4f}, car cluster {cluster_err:.4f} (tol 0.02)")


# --- 7: depth diagnostic semantics ---------------------------------------------

# (class, gt z, prediction offset, expected correct)
_DEPTH_SUITE = [
    [("Car", 10.0, 1.5, True), ("Car", 18.0, -2.0, False), ("Pedestrian", 12.0, -1.5, True)],
    [("Car", 25.0, 0.0, True), ("Car", 38.0, 1.5, True), ("Pedestrian", 30.0, 3.0, False)],
    [("Car", 55.0, 2.0, False), ("Cyclist", 45.0, -1.0, True)],
]
# accuracy (%) per (class, bucket) worked out by hand from the table above
_DEPTH_EXPECTED = {
    ("Car", 20.0): 50.0, ("Car", 40.0): 75.0, ("Car", 80.0): 60.0,
    ("Pedestrian", 20.0): 100.0, ("Pedestrian", 40.0): 50.0, ("Pedestrian", 80.0): 50.0,
    ("Cyclist", 20.0): None, ("Cyclist", 40.0): None, ("Cyclist", 80.0): 100.0,
}


def _depth_frame(boxes):
    values = np.zeros((375, 1242), dtype=np.float32)
    labels = []
    for i, (cls, z, offset, _) in enumerate(boxes):
        left = 50.0 + 300.0 * i
        values[100:161, int(left):int(left) + 81] = z + offset
        labels.append(LabelRecord(cls, 0.0, 0, 0.0, (left, 100.0, left + 80.0, 160.0),
                                  (1.5, 1.6, 3.9), (0.0, 1.6, z), 0.0))
    return labels, ScalarRaster(values, "depth_m")


def criterion_7():
    outcomes, per_box_ok = [], True
    for frame in _DEPTH_SUITE:
        labels, depth = _depth_frame(frame)
        got = depth_box_outcomes(labels, depth, threshold_m=1.5)
        per_box_ok &= [o.correct for o in got] == [b[3] for b in frame]
        outcomes += got
    report = DepthDiagReport.from_outcomes(outcomes)
    exact = report.accuracy == _DEPTH_EXPECTED
    monotone = all(
        report.counts[(c, 20.0)] <= report.counts[(c, 40.0)] <= report.counts[(c, 80.0)]
        for c in report.classes
    )
    labels, depth = _depth_frame([("Car", 20.0, 1.5, True)])
    boundary = depth_box_outcomes(labels, depth)[0].correct
    ok = per_box_ok and exact and monotone and boundary
    return ok, (f"|d_pred - d_gt| = 1.5 m counted correct: {boundary}; per-box outcomes match: {per_box_ok}; "
                f"hand-computed accuracies reproduced exactly: {exact}; cumulative counts monotone: {monotone}")


# --- 8: format fidelity --------------------------------------------------------

def _random_label(rng, with_score):
    left, top = rng.uniform(0, 1000), rng.uniform(0, 300)
    return LabelRecord(
        str(rng.choice(["Car", "Van", "Pedestrian", "Cyclist", "Truck", "Misc", "Tram", "Person_sitting"])),
        round(float(rng.uniform(0, 1)), 2), int(rng.integers(0, 4)), float(rng.uniform(-math.pi, math.pi)),
        (left, top, left + rng.uniform(1, 200), top + rng.uniform(1, 70)),
        tuple(rng.uniform(0.3, 5.0, 3)), tuple(rng.uniform(-50, 80, 3)), float(rng.uniform(-math.pi, math.pi)),
        float(rng.uniform(0, 1)) if with_score else None,
    )


def criterion_8():
    rng = np.random.default_rng(88)
    calib_err = 0.0
    for _ in range(200):
        calib = synthetic.random_calibration(rng)
        back = kitti_io.parse_calibration(kitti_io.serialize_calibration(calib))
        for name in ("p2", "r0_rect", "tr_velo_to_cam"):
            calib_err = max(calib_err, float(np.abs(getattr(back, name) - getattr(calib, name)).max()))

    bin_ok = True
    for n in (0, 1, 7, 16384, 40000):
        pts = rng.uniform(-80, 80, (n, 4)).astype(np.float32)
        pts[:, 3] = rng.random(n)
        data = kitti_io.write_pointcloud_bin(PointCloud(pts))
        bin_ok &= len(data) == 16 * n and kitti_io.read_pointcloud_bin(data).points.tobytes() == pts.tobytes()

    png_ok = True
    for shape in ((1, 1), (17, 33), (375, 1242)):
        raw = rng.integers(0, 65536, shape)
        raw[0, 0] = 65535
        raster = ScalarRaster(raw / 256.0, "depth_m")
        png_ok &= np.array_equal(kitti_io.read_depth_png(kitti_io.write_depth_png(raster)).values, raster.values)

    label_err = 0.0
    for with_score in (False, True):
        for _ in range(50):
            recs = [_random_label(rng, with_score) for _ in range(int(rng.integers(0, 12)))]
            back = kitti_io.parse_labels(kitti_io.serialize_labels(recs), require_score=with_score)
            for a, b in zip(recs, back):
                va = [a.truncation, a.occlusion, *a.bbox2d, *a.dims, *a.location, a.score or 0]
                vb = [b.truncation, b.occlusion, *b.bbox2d, *b.dims, *b.location, b.score or 0]
                label_err = max(label_err, float(np.abs(np.subtract(va, vb)).max()),
                                abs(math.remainder(a.rotation_y - b.rotation_y, 2 * math.pi)))
            if len(back) != len(recs) or any(a.class_name != b.class_name for a, b in zip(recs, back)):
                label_err = math.inf

    ok = calib_err <= 1e-6 and bin_ok and png_ok and label_err <= 1e-6
    return ok, (f"calibration max error {calib_err:.1e} (tol 1e-6); .bin bit-exact: {bin_ok}; "
                f"depth PNG exact on 1/256 grid: {png_ok}; labels max error {label_err:.1e}")


# --- 9: optional end-to-end on real data ---------------------------------------

def criterion_9():
    """Needs KITTI_ROOT (KITTI object training layout with a depth/ folder of
    predictions and ImageSets/{train,val}.txt)."""
    root = os.environ.get("KITTI_ROOT")
    if not root:
        return None, "skipped: set KITTI_ROOT to a KITTI layout with depth/ predictions"
    from pseudolidar.cli import main

    root = Path(root)
    with tempfile.TemporaryDirectory() as out:
        args = ["--dataset-root", str(root), "--split", str(root / "ImageSets/val.txt"), "--out", out,
                "--jobs", str(os.cpu_count() or 1), "--tolerate-frame-errors"]
        cfg = Path(out) / "run.yaml"
        cfg.write_text(f"dataset_root: {root}\ntrain_split_file: ImageSets/train.txt\n")
        if main(["fit", "--config", str(cfg), *args]) != 0 or main(["eval", *args]) != 0:
            return False, "fit/eval did not complete"
        import json
        rows = [json.loads(r) for r in (Path(out) / "eval_report.jsonl").read_text().splitlines()]
    mod = next(r["ap40"] for r in rows if r["difficulty"] == "Moderate" and r["iou"] == 0.7 and r["metric"] == "3d")
    ok = mod is not None and mod < 10.0
    return ok, f"Exp 0 AP_3D Moderate@0.7 = {mod} (expected low single digits)"


CRITERIA = {
    1: ("IoU agrees with Monte-Carlo oracle", criterion_1),
    2: ("analytic IoU fixtures", criterion_2),
    3: ("AP40 matches reference evaluator", criterion_3),
    4: ("pseudo-LiDAR construction invariants", criterion_4),
    5: ("camera/velodyne round trip", criterion_5),
    6: ("fitter recovers synthetic car", criterion_6),
    7: ("depth diagnostic semantics", criterion_7),
    8: ("format fidelity", criterion_8),
    9: ("end-to-end on KITTI (optional)", criterion_9),
}


def _line(num, title, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    return f"{status} criterion {num} ({title}): {detail}"


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_criterion(num):
    title, fn = CRITERIA[num]
    ok, detail = fn()
    RESULTS[num] = _line(num, title, ok, detail)
    if ok is None:
        pytest.skip(detail)
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for num in sorted(CRITERIA):
        title, fn = CRITERIA[num]
        ok, detail = fn()
        failed += ok is False
        print(_line(num, title, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
