"""Frames, unprojection, oriented boxes and rotated-box IoU.

Boxes are compared in a per-frame "ground plane" with a right-handed
(counter-clockwise) yaw:

    velodyne: ground = (x, y),  up = z,  center = center of volume
    camera:   ground = (x, -z), up = -y, center = bottom-face center (KITTI)

Under these maps KITTI ``rotation_y`` is the ordinary CCW angle of the box
length axis, so the same corner/IoU code serves both frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegeneratePolygon, FrameMismatch, NonPositiveDepth

if TYPE_CHECKING:
    from .kitti_io import Calibration

FRAMES = ("camera", "velodyne")


def normalize_yaw(yaw: float) -> float:
    """Map an angle into (-pi, pi]."""
    y = math.remainder(float(yaw), 2.0 * math.pi)
    return math.pi if y <= -math.pi else y


def _check_frame(frame: str) -> None:
    if frame not in FRAMES:
        raise ValueError(f"unknown frame {frame!r}")


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 4 float32 points (x, y, z, intensity) tagged with their frame."""

    points: np.ndarray
    frame: str = "velodyne"

    def __post_init__(self):
        _check_frame(self.frame)
        pts = np.array(self.points, dtype=np.float32).reshape(-1, 4)
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        if pts.size and (pts[:, 3].min() < 0 or pts[:, 3].max() > 1):
            raise ValueError("intensity must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def take(self, index) -> "PointCloud":
        return PointCloud(self.points[index], self.frame)

    def with_intensity(self, intensity) -> "PointCloud":
        pts = self.points.copy()
        pts[:, 3] = intensity
        return PointCloud(pts, self.frame)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box.

    ``dims`` is (length, width, height). In the camera frame ``center`` is the
    bottom-face center (KITTI label convention), in the velodyne frame it is
    the center of volume.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    frame: str = "camera"

    def __post_init__(self):
        _check_frame(self.frame)
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims need three components")
        if not all(d > 0 for d in dims):
            raise ValueError(f"box dimensions must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def length(self) -> float:
        return self.dims[0]

    @property
    def width(self) -> float:
        return self.dims[1]

    @property
    def height(self) -> float:
        return self.dims[2]

    def ground_center(self) -> tuple[float, float]:
        x, y, z = self.center
        return (x, y) if self.frame == "velodyne" else (x, -z)

    def vertical_interval(self) -> tuple[float, float]:
        """(bottom, top) along the frame's up axis."""
        h = self.height
        if self.frame == "velodyne":
            z = self.center[2]
            return z - h / 2.0, z + h / 2.0
        up = -self.center[1]
        return up, up + h

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]


# --- unprojection and frame transforms ---------------------------------------

def unproject(u: float, v: float, depth: float, calib: "Calibration") -> tuple[float, float, float]:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    x = (u - calib.cx) * depth / calib.fx
    y = (v - calib.cy) * depth / calib.fy
    return x, y, float(depth)


def unproject_pixels(u: np.ndarray, v: np.ndarray, depth: np.ndarray, calib: "Calibration") -> np.ndarray:
    """Vectorized pinhole back-projection; returns (N, 3) float64 camera points."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.size and not (depth > 0).all():
        raise NonPositiveDepth("all depths must be positive")
    x = (np.asarray(u, dtype=np.float64) - calib.cx) * depth / calib.fx
    y = (np.asarray(v, dtype=np.float64) - calib.cy) * depth / calib.fy
    return np.stack([x, y, depth], axis=-1)


def velo_to_cam_xyz(xyz: np.ndarray, calib: "Calibration") -> np.ndarray:
    """p_rect = R0 (R p + t), in float64."""
    xyz = np.asarray(xyz, dtype=np.float64)
    rot = calib.tr_velo_to_cam[:, :3]
    t = calib.tr_velo_to_cam[:, 3]
    return (xyz @ rot.T + t) @ calib.r0_rect.T


def cam_to_velo_xyz(xyz: np.ndarray, calib: "Calibration") -> np.ndarray:
    """Exact inverse of :func:`velo_to_cam_xyz`."""
    xyz = np.asarray(xyz, dtype=np.float64)
    rot = calib.tr_velo_to_cam[:, :3]
    t = calib.tr_velo_to_cam[:, 3]
    ref = np.linalg.solve(calib.r0_rect, xyz.T).T
    return np.linalg.solve(rot, (ref - t).T).T


def cam_to_velo(cloud: PointCloud, calib: "Calibration") -> PointCloud:
    if cloud.frame != "camera":
        raise FrameMismatch(f"expected camera-frame cloud, got {cloud.frame}")
    pts = np.empty_like(cloud.points)
    pts[:, :3] = cam_to_velo_xyz(cloud.xyz, calib)
    pts[:, 3] = cloud.intensity
    return PointCloud(pts, "velodyne")


def velo_to_cam(cloud: PointCloud, calib: "Calibration") -> PointCloud:
    if cloud.frame != "velodyne":
        raise FrameMismatch(f"expected velodyne-frame cloud, got {cloud.frame}")
    pts = np.empty_like(cloud.points)
    pts[:, :3] = velo_to_cam_xyz(cloud.xyz, calib)
    pts[:, 3] = cloud.intensity
    return PointCloud(pts, "camera")


def project_to_image(xyz_cam: np.ndarray, calib: "Calibration") -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of rectified camera points (inverse of unprojection)."""
    xyz_cam = np.asarray(xyz_cam, dtype=np.float64)
    z = xyz_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = calib.fx * xyz_cam[:, 0] / z + calib.cx
        v = calib.fy * xyz_cam[:, 1] / z + calib.cy
    return u, v


# --- box frame conversion ----------------------------------------------------

def box_cam_to_velo(box: Box3D, calib: "Calibration") -> Box3D:
    if box.frame != "camera":
        raise FrameMismatch("expected a camera-frame box")
    x, y, z = box.center
    mid = np.array([[x, y - box.height / 2.0, z]])
    center = cam_to_velo_xyz(mid, calib)[0]
    heading = np.array([[math.cos(box.yaw), 0.0, -math.sin(box.yaw)]])
    d = cam_to_velo_xyz(heading, calib)[0] - cam_to_velo_xyz(np.zeros((1, 3)), calib)[0]
    return Box3D(tuple(center), box.dims, math.atan2(d[1], d[0]), "velodyne")


def box_velo_to_cam(box: Box3D, calib: "Calibration") -> Box3D:
    if box.frame != "velodyne":
        raise FrameMismatch("expected a velodyne-frame box")
    mid = velo_to_cam_xyz(np.array([box.center]), calib)[0]
    bottom = (mid[0], mid[1] + box.height / 2.0, mid[2])
    heading = np.array([[math.cos(box.yaw), math.sin(box.yaw), 0.0]])
    d = velo_to_cam_xyz(heading, calib)[0] - velo_to_cam_xyz(np.zeros((1, 3)), calib)[0]
    return Box3D(bottom, box.dims, math.atan2(-d[2], d[0]), "camera")


# --- polygons and IoU --------------------------------------------------------

def box_corners_bev(box: Box3D) -> np.ndarray:
    """(4, 2) counter-clockwise footprint corners in ground coordinates."""
    # rectangles are symmetric under a half turn
    yaw = math.remainder(box.yaw, math.pi)
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = box.length / 2.0, box.width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(box.ground_center())


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip(subject: list, a, b) -> list:
    """Keep the part of ``subject`` on the left of (inclusive) edge a->b."""
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay

    def side(p):
        return ex * (p[1] - ay) - ey * (p[0] - ax)

    out = []
    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp, sq = side(p), side(q)
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def convex_polygon_intersection_area(a: np.ndarray, b: np.ndarray) -> float:
    """Area of the intersection of two convex CCW polygons.

    Uses successive half-plane clipping of ``a`` by every edge of ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a, area_b = polygon_area(a), polygon_area(b)
    if len(a) < 3 or len(b) < 3 or area_a <= 0 or area_b <= 0:
        raise DegeneratePolygon("polygons need >= 3 CCW vertices and positive area")

    subject = [tuple(p) for p in a]
    for i in range(len(b)):
        subject = _clip(subject, b[i], b[(i + 1) % len(b)])
        if len(subject) < 3:
            return 0.0
    area = polygon_area(np.array(subject))
    if area <= 1e-12 * min(area_a, area_b):
        return 0.0
    return min(area, area_a, area_b)


def _same_frame(a: Box3D, b: Box3D) -> None:
    if a.frame != b.frame:
        raise FrameMismatch(f"cannot compare {a.frame} box with {b.frame} box")


def bev_intersection(a: Box3D, b: Box3D) -> float:
    _same_frame(a, b)
    ca, cb = a.ground_center(), b.ground_center()
    # circumscribed-circle rejection
    ra = math.hypot(a.length, a.width) / 2.0
    rb = math.hypot(b.length, b.width) / 2.0
    if math.hypot(ca[0] - cb[0], ca[1] - cb[1]) >= ra + rb:
        return 0.0
    return convex_polygon_intersection_area(box_corners_bev(a), box_corners_bev(b))


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection(a, b)
    union = a.length * a.width + b.length * b.width - inter
    return min(1.0, max(0.0, inter / union))


def iou_3d(a: Box3D, b: Box3D) -> float:
    _same_frame(a, b)
    lo_a, hi_a = a.vertical_interval()
    lo_b, hi_b = b.vertical_interval()
    overlap_h = min(hi_a, hi_b) - max(lo_a, lo_b)
    if overlap_h <= 0:
        return 0.0
    inter = bev_intersection(a, b) * overlap_h
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))
