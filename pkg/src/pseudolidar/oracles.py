"""Independent reference implementations used to cross-check production code.

Nothing here shares code paths with the production kernels it checks:
``mc_iou`` never builds polygons, and ``reference_ap40`` re-runs matching
from scratch at every score threshold instead of sweeping once.
"""

from __future__ import annotations

import functools
import math

import numba
import numpy as np
from scipy.stats import qmc

from .geometry import Box3D, iou_3d, iou_bev


@functools.lru_cache(maxsize=4)
def _base_samples(log2_n: int) -> np.ndarray:
    return qmc.Sobol(d=3, scramble=True, seed=12345).random_base2(log2_n)


def _box_params(box: Box3D) -> np.ndarray:
    gx, gy = box.ground_center()
    lo, hi = box.vertical_interval()
    return np.array([gx, gy, lo, hi, box.length, box.width, box.yaw])


@numba.njit(cache=True)
def _count_inside(samples, shift, a, b):
    ca, sa = math.cos(a[6]), math.sin(a[6])
    cb, sb = math.cos(b[6]), math.sin(b[6])
    n_bev = 0
    n_3d = 0
    for k in range(samples.shape[0]):
        u0 = (samples[k, 0] + shift[0]) % 1.0 - 0.5
        u1 = (samples[k, 1] + shift[1]) % 1.0 - 0.5
        u2 = (samples[k, 2] + shift[2]) % 1.0
        # uniform point inside box a
        lx = u0 * a[4]
        ly = u1 * a[5]
        px = a[0] + ca * lx - sa * ly
        py = a[1] + sa * lx + ca * ly
        pz = a[2] + u2 * (a[3] - a[2])
        # inside box b?
        dx = px - b[0]
        dy = py - b[1]
        bx = cb * dx + sb * dy
        by = -sb * dx + cb * dy
        if abs(bx) <= 0.5 * b[4] and abs(by) <= 0.5 * b[5]:
            n_bev += 1
            if b[2] <= pz <= b[3]:
                n_3d += 1
    return n_bev, n_3d


def mc_iou(a: Box3D, b: Box3D, log2_n: int = 20, seed: int = 0) -> tuple[float, float]:
    """Point-sampling estimate of (BEV IoU, 3D IoU).

    Draws 2**log2_n randomly shifted Sobol points uniformly inside ``a`` and
    counts how many also fall inside ``b``; the intersection follows as that
    fraction of ``a``'s area/volume.
    """
    samples = _base_samples(log2_n)
    shift = np.random.default_rng(seed).random(3)
    pa, pb = _box_params(a), _box_params(b)
    n_bev, n_3d = _count_inside(samples, shift, pa, pb)
    n = samples.shape[0]
    area_a, area_b = a.length * a.width, b.length * b.width
    inter_bev = n_bev / n * area_a
    inter_3d = n_3d / n * a.volume
    return (
        inter_bev / (area_a + area_b - inter_bev),
        inter_3d / (a.volume + b.volume - inter_3d),
    )


# --- brute-force AP40 --------------------------------------------------------

def _label_box(label) -> Box3D:
    h, w, l = label.dims
    return Box3D(label.location, (l, w, h), label.rotation_y, "camera")


def _ioa(det, region):
    iw = min(det[2], region[2]) - max(det[0], region[0])
    ih = min(det[3], region[3]) - max(det[1], region[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / ((det[2] - det[0]) * (det[3] - det[1]))


def _count_frame(gt, dets, class_name, level, thr, metric, official, criteria):
    """(tp, fp, n_valid_gt) for one frame using only ``dets``, in the given order."""
    iou_fn = iou_bev if metric == "bev" else iou_3d
    min_h = criteria.min_height[level]
    max_occ = criteria.max_occlusion[level]
    max_trunc = criteria.max_truncation[level]
    neighbour = {"Car": "Van", "Pedestrian": "Person_sitting"}.get(class_name)

    valid, ignored, regions = [], [], []
    for g in gt:
        if g.class_name == class_name:
            easy_enough = (g.bbox2d[3] - g.bbox2d[1] >= min_h and g.occlusion <= max_occ
                           and g.truncation <= max_trunc)
            (valid if easy_enough else ignored).append(g)
        elif official and neighbour is not None and g.class_name == neighbour:
            ignored.append(g)
        elif official and g.class_name == "DontCare":
            regions.append(g.bbox2d)

    used_valid = [False] * len(valid)
    used_ignored = [False] * len(ignored)
    tp = fp = 0
    for d in dets:
        if d.class_name != class_name:
            continue
        if official and d.bbox2d[3] - d.bbox2d[1] < min_h:
            continue
        db = _label_box(d)
        matched = False
        for pool, used, is_valid in ((valid, used_valid, True), (ignored, used_ignored, False)):
            best, best_iou = None, -1.0
            for j, g in enumerate(pool):
                if used[j]:
                    continue
                v = iou_fn(db, _label_box(g))
                if v >= thr and v > best_iou:
                    best, best_iou = j, v
            if best is not None:
                used[best] = True
                tp += is_valid
                matched = True
                break
        if not matched and not any(_ioa(d.bbox2d, r) > 0.5 for r in regions):
            fp += 1
    return tp, fp, len(valid)


def reference_ap40(gt_frames, det_frames, class_name, difficulty, iou_threshold, metric,
                   dontcare_mode, criteria):
    """Direct precision/recall definition; ``None`` when no valid GT exists."""
    levels = ("Easy", "Moderate", "Hard")
    level = levels.index(difficulty)
    official = dontcare_mode == "official"
    scores = sorted({d.score for dets in det_frames for d in dets}, reverse=True)
    num_gt = sum(_count_frame(g, [], class_name, level, iou_threshold, metric, official, criteria)[2]
                 for g in gt_frames)
    if num_gt == 0:
        return None
    points = []
    for t in scores:
        tp = fp = 0
        for gt, dets in zip(gt_frames, det_frames):
            kept = [d for d in sorted(dets, key=lambda d: -d.score) if d.score >= t]
            a, b, _ = _count_frame(gt, kept, class_name, level, iou_threshold, metric, official, criteria)
            tp += a
            fp += b
        if tp + fp:
            points.append((tp, tp / (tp + fp)))
    total = 0.0
    for k in range(1, 41):
        best = 0.0
        for tp, prec in points:
            if tp * 40 >= k * num_gt:
                best = max(best, prec)
        total += best
    return total / 40 * 100.0
