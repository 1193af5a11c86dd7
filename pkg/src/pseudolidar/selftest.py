"""Embedded oracle suite behind ``pseudolidar selftest``."""

from __future__ import annotations

import math

import numpy as np

from . import kitti_io, synthetic
from .geometry import (
    Box3D, PointCloud, cam_to_velo_xyz, convex_polygon_intersection_area, iou_3d, iou_bev,
    velo_to_cam_xyz,
)
from .metrics import KITTI_CRITERIA, ap40
from .errors import NoGroundTruth
from .oracles import mc_iou, reference_ap40


def _iou_oracle(n_pairs):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(n_pairs):
        a, b = synthetic.random_box_pair(rng)
        m_bev, m_3d = mc_iou(a, b, seed=i)
        worst = max(worst, abs(m_bev - iou_bev(a, b)), abs(m_3d - iou_3d(a, b)))
    return worst < 2e-3, f"max |IoU - MC| = {worst:.2e} over {n_pairs} pairs"


def _analytic_iou():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    rot = (sq - 0.5) @ np.array([[c, -s], [s, c]]).T + 0.5
    octagon = convex_polygon_intersection_area(sq, rot)
    a = Box3D((0, 0, 0), (4, 2, 2), 0.0, "velodyne")
    b = Box3D((0, 0, 1), (4, 2, 2), 0.0, "velodyne")
    half = iou_3d(a, b)
    ok = abs(octagon - 2 * (math.sqrt(2) - 1)) < 1e-6 and abs(half - 1 / 3) < 1e-9
    return ok, f"octagon {octagon:.9f}, half-offset 3D IoU {half:.12f}"


def _ap_reference(n_scenes):
    rng = np.random.default_rng(7)
    gt, det = [], []
    for _ in range(n_scenes):
        g, d = synthetic.random_scene(rng)
        gt.append(g)
        det.append(d)
    worst = 0.0
    cells = 0
    for mode in ("official", "simple"):
        for diff in ("Easy", "Moderate", "Hard"):
            for thr in (0.5, 0.7):
                for metric in ("bev", "3d"):
                    ref = reference_ap40(gt, det, "Car", diff, thr, metric, mode, KITTI_CRITERIA)
                    try:
                        got = ap40(gt, det, "Car", diff, thr, metric, mode)
                    except NoGroundTruth:
                        got = None
                    if (ref is None) != (got is None):
                        return False, f"defined-ness differs in {mode}/{diff}/{thr}/{metric}"
                    if ref is not None:
                        worst = max(worst, abs(ref - got))
                        cells += 1
    return worst < 1e-9, f"max |AP - reference| = {worst:.1e} over {cells} cells"


def _perfect_detector():
    rng = np.random.default_rng(3)
    gt = [synthetic.random_scene(rng)[0] for _ in range(10)]
    det = [synthetic.gt_as_detections(g) for g in gt]
    values = []
    for diff in ("Easy", "Moderate", "Hard"):
        for thr in (0.5, 0.7):
            for metric in ("bev", "3d"):
                try:
                    values.append(ap40(gt, det, "Car", diff, thr, metric))
                except NoGroundTruth:
                    pass
    return all(v == 100.0 for v in values), f"{len(values)} cells, min AP {min(values):.4f}"


def _transform_roundtrip():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(3):
        calib = synthetic.random_calibration(rng)
        p = rng.uniform(-80, 80, (2000, 3))
        worst = max(worst, np.abs(cam_to_velo_xyz(velo_to_cam_xyz(p, calib), calib) - p).max())
    return worst < 1e-5, f"max deviation {worst:.2e} m"


def _format_roundtrips():
    rng = np.random.default_rng(5)
    calib = synthetic.random_calibration(rng)
    again = kitti_io.parse_calibration(kitti_io.serialize_calibration(calib))
    ok_calib = again.same_as(calib, atol=1e-6)
    pts = rng.uniform(-50, 50, (1000, 4)).astype(np.float32)
    pts[:, 3] = rng.random(1000)
    back = kitti_io.read_pointcloud_bin(kitti_io.write_pointcloud_bin(PointCloud(pts)))
    ok_bin = back.points.tobytes() == pts.tobytes()
    depth = rng.integers(0, 65536, (8, 9)) / 256.0
    raster = kitti_io.ScalarRaster(depth, "depth_m")
    ok_png = np.array_equal(kitti_io.read_depth_png(kitti_io.write_depth_png(raster)).values, raster.values)
    return ok_calib and ok_bin and ok_png, f"calib={ok_calib} bin={ok_bin} depth_png={ok_png}"


def run_selftest(quick: bool = True) -> list[tuple[str, bool, str]]:
    checks = [
        ("iou_vs_monte_carlo", lambda: _iou_oracle(100 if quick else 1000)),
        ("analytic_iou_fixtures", _analytic_iou),
        ("ap40_vs_reference", lambda: _ap_reference(20 if quick else 100)),
        ("ap40_perfect_detector", _perfect_detector),
        ("transform_roundtrip", _transform_roundtrip),
        ("format_roundtrips", _format_roundtrips),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
