"""Non-learning frustum box fitter (the oracle-2D-box baseline).

For every ground-truth 2D box: gather the pseudo-LiDAR points that project
into it, keep one density cluster, orient the box along the cluster's
principal ground-plane axis, and size it with the per-class mean dimensions.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
from sklearn.cluster import DBSCAN

from .errors import NoSamplesForClass, UnknownClass
from .geometry import Box3D, PointCloud, box_velo_to_cam, project_to_image, velo_to_cam_xyz
from .kitti_io import Calibration, LabelRecord


class ClusterSelection(str, enum.Enum):
    LARGEST = "largest"
    NEAREST_MEDIAN_DEPTH = "nearest_median_depth"


@dataclass(frozen=True)
class FitterConfig:
    cluster_epsilon: float = 0.5
    cluster_min_points: int = 10
    min_frustum_points: int = 10
    cluster_selection: ClusterSelection = ClusterSelection.NEAREST_MEDIAN_DEPTH
    # below this eigenvalue ratio the principal axis is noise
    isotropy_ratio: float = 1.2
    bottom_percentile: float = 5.0
    # dense near-range frustums are thinned before clustering to bound memory
    max_cluster_input: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "cluster_selection", ClusterSelection(self.cluster_selection))
        if not self.cluster_epsilon > 0:
            raise ValueError("cluster_epsilon must be positive")
        if self.cluster_min_points < 1 or self.min_frustum_points < 1 or self.max_cluster_input < 1:
            raise ValueError("point counts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "cluster_epsilon": self.cluster_epsilon,
            "cluster_min_points": self.cluster_min_points,
            "min_frustum_points": self.min_frustum_points,
            "cluster_selection": self.cluster_selection.value,
            "isotropy_ratio": self.isotropy_ratio,
            "bottom_percentile": self.bottom_percentile,
            "max_cluster_input": self.max_cluster_input,
        }


@dataclass(frozen=True)
class SizePriors:
    """Mean (height, width, length) per class, in label-file order."""

    means: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, dims in self.means.items():
            if len(dims) != 3 or min(dims) <= 0:
                raise ValueError(f"invalid prior for {name}: {dims}")

    def __contains__(self, class_name: str) -> bool:
        return class_name in self.means

    def box_dims(self, class_name: str) -> tuple[float, float, float]:
        """(length, width, height) for :class:`Box3D`."""
        if class_name not in self.means:
            raise UnknownClass(class_name)
        h, w, l = self.means[class_name]
        return l, w, h


def compute_size_priors(labels: Iterable[LabelRecord], classes: Iterable[str] | None = None) -> SizePriors:
    sums: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(3))
    counts: dict[str, int] = defaultdict(int)
    for rec in labels:
        if rec.class_name == "DontCare":
            continue
        sums[rec.class_name] += rec.dims
        counts[rec.class_name] += 1
    wanted = sorted(counts) if classes is None else list(classes)
    for name in wanted:
        if counts.get(name, 0) == 0:
            raise NoSamplesForClass(name)
    means = {name: tuple(float(v) for v in sums[name] / counts[name]) for name in wanted}
    return SizePriors(means, {name: counts[name] for name in wanted})


def frustum_points(
    cloud: PointCloud,
    bbox2d,
    calib: Calibration,
    image_size: tuple[int, int] | None = None,
) -> PointCloud:
    """Points whose image projection lies inside ``bbox2d`` (edges inclusive).

    ``image_size`` is (width, height); when given the box is clamped to it.
    """
    left, top, right, bottom = (float(v) for v in bbox2d)
    if image_size is not None:
        w, h = image_size
        left, right = max(left, 0.0), min(right, float(w))
        top, bottom = max(top, 0.0), min(bottom, float(h))
    if right <= left or bottom <= top or len(cloud) == 0:
        return cloud.take(np.zeros(0, dtype=int))

    cam = cloud.xyz.astype(np.float64) if cloud.frame == "camera" else velo_to_cam_xyz(cloud.xyz, calib)
    in_front = cam[:, 2] > 0
    u, v = project_to_image(cam, calib)
    inside = in_front & (u >= left) & (u <= right) & (v >= top) & (v <= bottom)
    return cloud.take(np.flatnonzero(inside))


def _forward_depth(cloud: PointCloud) -> np.ndarray:
    axis = 0 if cloud.frame == "velodyne" else 2
    return cloud.xyz[:, axis].astype(np.float64)


def cluster_and_select(
    points: PointCloud, cfg: FitterConfig, reference_depth: float | None = None
) -> PointCloud | None:
    """DBSCAN over (x, y, z), then pick one cluster.

    Inputs above ``cfg.max_cluster_input`` points are thinned by a fixed
    stride first; DBSCAN memory grows with neighbourhood size.

    ``reference_depth`` is the depth the nearest-median rule aims for; it
    defaults to the median forward depth of all input points.
    """
    if len(points) < cfg.min_frustum_points:
        return None
    if len(points) > cfg.max_cluster_input:
        # fixed stride keeps the result deterministic and spatially uniform
        stride = -(-len(points) // cfg.max_cluster_input)
        points = points.take(np.arange(0, len(points), stride))
    labels = DBSCAN(eps=cfg.cluster_epsilon, min_samples=cfg.cluster_min_points).fit_predict(
        points.xyz.astype(np.float64)
    )
    ids = np.unique(labels[labels >= 0])
    if len(ids) == 0:
        return None

    if cfg.cluster_selection is ClusterSelection.LARGEST:
        sizes = [np.count_nonzero(labels == i) for i in ids]
        best = ids[int(np.argmax(sizes))]
    else:
        depth = _forward_depth(points)
        ref = float(np.median(depth)) if reference_depth is None else float(reference_depth)
        gaps = [abs(float(np.median(depth[labels == i])) - ref) for i in ids]
        best = ids[int(np.argmin(gaps))]
    return points.take(np.flatnonzero(labels == best))


class YawEstimate(NamedTuple):
    yaw: float
    eigen_ratio: float
    degenerate: bool


def pca_yaw(points_xy) -> YawEstimate:
    """Principal-axis heading of ground-plane points, in (-pi/2, pi/2].

    Coincident points give ``yaw = 0`` with ``degenerate`` set.
    """
    xy = np.asarray(points_xy, dtype=np.float64).reshape(-1, 2)
    d = xy - xy.mean(axis=0)
    sxx = float(np.mean(d[:, 0] ** 2))
    syy = float(np.mean(d[:, 1] ** 2))
    sxy = float(np.mean(d[:, 0] * d[:, 1]))
    trace = sxx + syy
    if len(xy) < 2 or trace <= 1e-18:
        return YawEstimate(0.0, 1.0, True)
    # eigenvalues of [[sxx, sxy], [sxy, syy]]
    half_gap = math.hypot((sxx - syy) / 2.0, sxy)
    lam_major = trace / 2.0 + half_gap
    lam_minor = trace / 2.0 - half_gap
    ratio = math.inf if lam_minor <= 0 else lam_major / lam_minor
    yaw = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    if yaw <= -math.pi / 2:
        yaw += math.pi
    return YawEstimate(yaw, ratio, False)


def fit_box(
    cluster: PointCloud, class_name: str, priors: SizePriors, yaw: float, bottom_percentile: float = 5.0
) -> Box3D:
    """Place the prior-sized box on the cluster (velodyne frame).

    Ground-plane center is the cluster centroid, the bottom sits at a low
    percentile of z so stray below-ground points do not drag it down.
    """
    if len(cluster) == 0:
        raise ValueError("cannot fit a box to an empty cluster")
    length, width, height = priors.box_dims(class_name)
    xyz = cluster.xyz.astype(np.float64)
    cx, cy = xyz[:, 0].mean(), xyz[:, 1].mean()
    bottom = float(np.percentile(xyz[:, 2], bottom_percentile))
    return Box3D((cx, cy, bottom + height / 2.0), (length, width, height), yaw, "velodyne")


def box_to_detection(box_cam: Box3D, class_name: str, bbox2d, score: float) -> LabelRecord:
    x, _, z = box_cam.center
    alpha = box_cam.yaw - math.atan2(x, z)
    alpha = math.atan2(math.sin(alpha), math.cos(alpha))
    l, w, h = box_cam.dims
    return LabelRecord(
        class_name=class_name, truncation=-1.0, occlusion=-1, alpha=alpha,
        bbox2d=tuple(bbox2d), dims=(h, w, l), location=box_cam.center,
        rotation_y=box_cam.yaw, score=score,
    )


def exp0_detect(
    cloud: PointCloud,
    gt_labels: Iterable[LabelRecord],
    calib: Calibration,
    priors: SizePriors,
    cfg: FitterConfig = FitterConfig(),
    image_size: tuple[int, int] | None = None,
) -> list[LabelRecord]:
    """One camera-frame detection per GT 2D box whose frustum yields a cluster.

    Classes are matched strictly (a Van box is fitted with the Van prior) and
    classes without a prior are skipped. Score is 1 / (1 + median depth).
    """
    detections = []
    for gt in gt_labels:
        if gt.class_name == "DontCare" or gt.class_name not in priors:
            continue
        frustum = frustum_points(cloud, gt.bbox2d, calib, image_size)
        cluster = cluster_and_select(frustum, cfg)
        if cluster is None:
            continue
        xy = cluster.xyz[:, :2].astype(np.float64)
        est = pca_yaw(xy)
        if est.degenerate or est.eigen_ratio < cfg.isotropy_ratio:
            centroid = xy.mean(axis=0)
            yaw = math.atan2(centroid[1], centroid[0])
        else:
            yaw = est.yaw
        box = fit_box(cluster, gt.class_name, priors, yaw, cfg.bottom_percentile)
        median_depth = max(float(np.median(_forward_depth(cluster))), 0.0)
        score = 1.0 / (1.0 + median_depth)
        detections.append(box_to_detection(box_velo_to_cam(box, calib), gt.class_name, gt.bbox2d, score))
    return detections
