"""KITTI-style evaluation: difficulty buckets, AP40 (BEV / 3D) and the
depth-accuracy-versus-distance diagnostic."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NoGroundTruth
from .geometry import Box3D, iou_3d, iou_bev
from .kitti_io import LabelRecord, ScalarRaster

DIFFICULTIES = ("Easy", "Moderate", "Hard")
METRICS = ("bev", "3d")
NUM_RECALL_POINTS = 40
DEPTH_CLASSES = ("Car", "Pedestrian", "Cyclist")

# official-mode neighbour classes that are neither positives nor false positives
_NEIGHBOUR_CLASS = {"Car": "Van", "Pedestrian": "Person_sitting"}

TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class DifficultyCriteria:
    min_height: tuple[float, float, float] = (40.0, 25.0, 25.0)
    max_occlusion: tuple[int, int, int] = (0, 1, 2)
    max_truncation: tuple[float, float, float] = (0.15, 0.30, 0.50)

    def __post_init__(self):
        mh, mo, mt = self.min_height, self.max_occlusion, self.max_truncation
        if not (mh[0] >= mh[1] >= mh[2] and mo[0] <= mo[1] <= mo[2] and mt[0] <= mt[1] <= mt[2]):
            raise ValueError("difficulty criteria must loosen from Easy to Hard")

    def qualifies(self, label: LabelRecord, difficulty: str) -> bool:
        i = DIFFICULTIES.index(difficulty)
        return (
            label.height_px >= self.min_height[i]
            and label.occlusion <= self.max_occlusion[i]
            and label.truncation <= self.max_truncation[i]
        )


KITTI_CRITERIA = DifficultyCriteria()


def assign_difficulty(label: LabelRecord, criteria: DifficultyCriteria = KITTI_CRITERIA) -> frozenset:
    return frozenset(d for d in DIFFICULTIES if criteria.qualifies(label, d))


def label_to_box(label: LabelRecord) -> Box3D:
    h, w, l = label.dims
    return Box3D(label.location, (l, w, h), label.rotation_y, "camera")


def _ioa_2d(det_box, region) -> float:
    """Intersection over the detection's image-plane area."""
    iw = min(det_box[2], region[2]) - max(det_box[0], region[0])
    ih = min(det_box[3], region[3]) - max(det_box[1], region[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    area = (det_box[2] - det_box[0]) * (det_box[3] - det_box[1])
    return iw * ih / area if area > 0 else 0.0


def _check_mode(mode: str) -> None:
    if mode not in ("official", "simple"):
        raise ValueError(f"unknown DontCare mode {mode!r}")


class _FrameCache:
    """Boxes and pairwise IoU for one frame, shared across evaluation cells."""

    def __init__(self, gt: Sequence[LabelRecord], det: Sequence[LabelRecord]):
        self.gt = list(gt)
        # stable sort: equal scores keep file order
        self.det = sorted(det, key=lambda d: -d.score)
        self._boxes_gt = [None if g.class_name == "DontCare" else label_to_box(g) for g in self.gt]
        self._boxes_det = [label_to_box(d) for d in self.det]
        self._iou: dict = {}

    def iou(self, metric: str) -> np.ndarray:
        if metric not in self._iou:
            fn = iou_bev if metric == "bev" else iou_3d
            m = np.zeros((len(self.det), len(self.gt)))
            for j, gb in enumerate(self._boxes_gt):
                if gb is None:
                    continue
                for i, db in enumerate(self._boxes_det):
                    m[i, j] = fn(db, gb)
            self._iou[metric] = m
        return self._iou[metric]


def _match_frame(
    cache: _FrameCache,
    class_name: str,
    difficulty: str,
    iou_threshold: float,
    metric: str,
    mode: str,
    criteria: DifficultyCriteria,
) -> tuple[int, list[tuple[float, int]]]:
    """Greedy score-ordered matching for one frame.

    Returns the number of valid GT boxes and one (score, status) per
    detection that is not ignored.
    """
    d_idx = DIFFICULTIES.index(difficulty)
    valid, ignored, dontcare = [], [], []
    for j, g in enumerate(cache.gt):
        if g.class_name == class_name:
            (valid if criteria.qualifies(g, difficulty) else ignored).append(j)
        elif mode == "official" and g.class_name == _NEIGHBOUR_CLASS.get(class_name):
            ignored.append(j)
        elif mode == "official" and g.class_name == "DontCare":
            dontcare.append(g.bbox2d)

    iou = cache.iou(metric)
    taken = set()
    out = []
    for i, d in enumerate(cache.det):
        if d.class_name != class_name:
            continue
        if mode == "official" and d.height_px < criteria.min_height[d_idx]:
            continue
        status = None
        for pool, hit in ((valid, TP), (ignored, IGNORED)):
            best, best_iou = -1, -1.0
            for j in pool:
                if j not in taken and iou[i, j] >= iou_threshold and iou[i, j] > best_iou:
                    best, best_iou = j, iou[i, j]
            if best >= 0:
                taken.add(best)
                status = hit
                break
        if status is None:
            if any(_ioa_2d(d.bbox2d, r) > 0.5 for r in dontcare):
                status = IGNORED
            else:
                status = FP
        if status != IGNORED:
            out.append((d.score, status))
    return len(valid), out


def _ap_from_matches(num_gt: int, matches: list[tuple[float, int]]) -> tuple[float, np.ndarray]:
    """AP40 from pooled (score, is_tp) records, one operating point per distinct score."""
    matches = sorted(matches, key=lambda m: -m[0])
    rec_tp, prec = [], []
    tp = fp = 0
    for k, (score, status) in enumerate(matches):
        tp += status == TP
        fp += status == FP
        if k + 1 == len(matches) or matches[k + 1][0] != score:
            rec_tp.append(tp)
            prec.append(tp / (tp + fp))
    rec_tp = np.array(rec_tp, dtype=np.int64)
    prec = np.array(prec)
    sampled = np.zeros(NUM_RECALL_POINTS)
    for k in range(1, NUM_RECALL_POINTS + 1):
        # recall >= k/40, compared exactly in integers
        reach = rec_tp * NUM_RECALL_POINTS >= k * num_gt
        if reach.any():
            sampled[k - 1] = prec[reach].max()
    return float(sampled.mean() * 100.0), sampled


def _caches(gt_frames, det_frames) -> list[_FrameCache]:
    if len(gt_frames) != len(det_frames):
        raise ValueError(f"{len(gt_frames)} GT frames but {len(det_frames)} detection frames")
    for dets in det_frames:
        for d in dets:
            if d.score is None:
                raise ValueError("detections must carry scores")
    return [_FrameCache(g, d) for g, d in zip(gt_frames, det_frames)]


def _ap40_cached(caches, class_name, difficulty, iou_threshold, metric, mode, criteria):
    num_gt = 0
    pooled: list[tuple[float, int]] = []
    for cache in caches:
        n, m = _match_frame(cache, class_name, difficulty, iou_threshold, metric, mode, criteria)
        num_gt += n
        pooled.extend(m)
    if num_gt == 0:
        raise NoGroundTruth(f"no {difficulty} {class_name} ground truth")
    return _ap_from_matches(num_gt, pooled)


def ap40(
    gt_frames: Sequence[Sequence[LabelRecord]],
    det_frames: Sequence[Sequence[LabelRecord]],
    class_name: str = "Car",
    difficulty: str = "Moderate",
    iou_threshold: float = 0.7,
    metric: str = "3d",
    dontcare_mode: str = "official",
    criteria: DifficultyCriteria = KITTI_CRITERIA,
) -> float:
    """AP with 40 recall samples, in percent.

    Raises :class:`NoGroundTruth` when the class/difficulty cell is empty.
    """
    _check_mode(dontcare_mode)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    caches = _caches(gt_frames, det_frames)
    ap, _ = _ap40_cached(caches, class_name, difficulty, iou_threshold, metric, dontcare_mode, criteria)
    return ap


@dataclass
class EvalReport:
    """AP40 per (class, difficulty, IoU threshold, metric); ``None`` where undefined."""

    ap: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)
    classes: tuple = ("Car",)
    iou_thresholds: tuple = (0.5, 0.7)
    dontcare_mode: str = "official"
    config_hash: str | None = None

    def get(self, class_name, difficulty, iou_threshold, metric):
        return self.ap.get((class_name, difficulty, float(iou_threshold), metric))

    def to_records(self) -> list[dict]:
        rows = []
        for (cls, diff, thr, metric), value in self.ap.items():
            prec = self.precision.get((cls, diff, thr, metric))
            rows.append({
                "class": cls, "difficulty": diff, "iou": thr, "metric": metric,
                "ap40": None if value is None else round(value, 6),
                "precision": None if prec is None else [round(float(p), 6) for p in prec],
                "dontcare_mode": self.dontcare_mode, "config_hash": self.config_hash,
            })
        return rows

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def to_table(self) -> str:
        """Plain-text table: AP_BEV/AP_3D per difficulty and IoU threshold."""
        def cell(cls, diff, thr):
            parts = []
            for m in METRICS:
                v = self.get(cls, diff, thr, m)
                parts.append("--" if v is None else f"{v:.2f}")
            return "/".join(parts)

        head = ["Class"]
        for thr in self.iou_thresholds:
            head += [f"{d}@{thr:g}" for d in DIFFICULTIES]
        lines = [
            f"# AP40, values are AP_BEV/AP_3D (%), dontcare_mode={self.dontcare_mode}"
            + (f", config={self.config_hash}" if self.config_hash else ""),
            "\t".join(head),
        ]
        for cls in self.classes:
            row = [cls] + [cell(cls, d, thr) for thr in self.iou_thresholds for d in DIFFICULTIES]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def evaluate(
    gt_frames: Sequence[Sequence[LabelRecord]],
    det_frames: Sequence[Sequence[LabelRecord]],
    classes: Iterable[str] = ("Car",),
    iou_thresholds: Iterable[float] = (0.5, 0.7),
    dontcare_mode: str = "official",
    criteria: DifficultyCriteria = KITTI_CRITERIA,
    config_hash: str | None = None,
) -> EvalReport:
    _check_mode(dontcare_mode)
    classes = tuple(classes)
    thresholds = tuple(float(t) for t in iou_thresholds)
    caches = _caches(gt_frames, det_frames)
    report = EvalReport(classes=classes, iou_thresholds=thresholds,
                        dontcare_mode=dontcare_mode, config_hash=config_hash)
    for cls in classes:
        for diff in DIFFICULTIES:
            for thr in thresholds:
                for metric in METRICS:
                    key = (cls, diff, thr, metric)
                    try:
                        ap, prec = _ap40_cached(caches, cls, diff, thr, metric, dontcare_mode, criteria)
                    except NoGroundTruth:
                        ap, prec = None, None
                    report.ap[key] = ap
                    report.precision[key] = prec
    return report


# --- depth diagnostic --------------------------------------------------------

@dataclass(frozen=True)
class DepthOutcome:
    class_name: str
    gt_depth: float
    pred_depth: float | None
    correct: bool


def box_median_depth(depth: ScalarRaster, bbox2d, depth_min: float = 1.0, depth_max: float = 60.0):
    """Median of valid depth over pixels whose centers fall inside the box."""
    left, top, right, bottom = bbox2d
    u0 = max(int(math.ceil(left)), 0)
    u1 = min(int(math.floor(right)), depth.width - 1)
    v0 = max(int(math.ceil(top)), 0)
    v1 = min(int(math.floor(bottom)), depth.height - 1)
    if u1 < u0 or v1 < v0:
        return None
    patch = depth.values[v0:v1 + 1, u0:u1 + 1].astype(np.float64)
    valid = patch[(patch > depth_min) & (patch < depth_max)]
    return float(np.median(valid)) if valid.size else None


def depth_box_outcomes(
    labels: Iterable[LabelRecord],
    depth: ScalarRaster,
    threshold_m: float = 1.5,
    classes: Iterable[str] = DEPTH_CLASSES,
    depth_min: float = 1.0,
    depth_max: float = 60.0,
) -> list[DepthOutcome]:
    classes = tuple(classes)
    out = []
    for lab in labels:
        if lab.class_name not in classes:
            continue
        z = lab.location[2]
        pred = box_median_depth(depth, lab.bbox2d, depth_min, depth_max)
        # boxes without valid depth count as misses
        correct = pred is not None and abs(pred - z) <= threshold_m
        out.append(DepthOutcome(lab.class_name, z, pred, correct))
    return out


@dataclass
class DepthDiagReport:
    """Accuracy (%) and sample count per (class, cumulative range bucket)."""

    accuracy: dict
    counts: dict
    classes: tuple = DEPTH_CLASSES
    buckets: tuple = (20.0, 40.0, 80.0)
    threshold_m: float = 1.5
    config_hash: str | None = None

    @classmethod
    def from_outcomes(cls, outcomes, classes=DEPTH_CLASSES, buckets=(20.0, 40.0, 80.0),
                      threshold_m=1.5, config_hash=None) -> "DepthDiagReport":
        accuracy, counts = {}, {}
        for c in classes:
            for b in buckets:
                sel = [o for o in outcomes if o.class_name == c and o.gt_depth <= b]
                counts[(c, float(b))] = len(sel)
                accuracy[(c, float(b))] = (
                    100.0 * sum(o.correct for o in sel) / len(sel) if sel else None
                )
        return cls(accuracy, counts, tuple(classes), tuple(float(b) for b in buckets),
                   threshold_m, config_hash)

    def to_records(self) -> list[dict]:
        return [
            {"class": c, "range_max_m": b, "accuracy": self.accuracy[(c, b)],
             "count": self.counts[(c, b)], "threshold_m": self.threshold_m,
             "config_hash": self.config_hash}
            for c in self.classes for b in self.buckets
        ]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def to_csv(self) -> str:
        lines = ["class,range_max_m,accuracy,count"]
        for r in self.to_records():
            acc = "" if r["accuracy"] is None else f"{r['accuracy']:.4f}"
            lines.append(f"{r['class']},{r['range_max_m']:g},{acc},{r['count']}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = [f"# depth accuracy (%), correct if |d_pred - d_gt| <= {self.threshold_m:g} m"
                 + (f", config={self.config_hash}" if self.config_hash else ""),
                 "\t".join(["Range (m)", *self.classes])]
        for b in self.buckets:
            cells = []
            for c in self.classes:
                acc = self.accuracy[(c, b)]
                cells.append("--" if acc is None else f"{acc:.1f} (n={self.counts[(c, b)]})")
            lines.append("\t".join([f"<= {b:g}", *cells]))
        return "\n".join(lines) + "\n"


def depth_diagnostic(
    labels: Iterable[LabelRecord],
    depth: ScalarRaster,
    threshold_m: float = 1.5,
    buckets: Iterable[float] = (20.0, 40.0, 80.0),
    classes: Iterable[str] = DEPTH_CLASSES,
    depth_min: float = 1.0,
    depth_max: float = 60.0,
) -> DepthDiagReport:
    """Single-frame diagnostic; use :meth:`DepthDiagReport.from_outcomes` to pool frames."""
    classes = tuple(classes)
    outcomes = depth_box_outcomes(labels, depth, threshold_m, classes, depth_min, depth_max)
    return DepthDiagReport.from_outcomes(outcomes, classes, tuple(buckets), threshold_m)
