"""Synthetic calibrations, boxes, scenes and rendered depth for tests and demos."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Box3D, box_cam_to_velo, box_velo_to_cam, project_to_image, velo_to_cam_xyz
from .kitti_io import Calibration, LabelRecord

# KITTI object calib 000000 (public values)
KITTI_P2 = np.array([
    [7.215377e02, 0.0, 6.095593e02, 4.485728e01],
    [0.0, 7.215377e02, 1.728540e02, 2.163791e-01],
    [0.0, 0.0, 1.0, 2.745884e-03],
])
KITTI_R0 = np.array([
    [9.999239e-01, 9.837760e-03, -7.445048e-03],
    [-9.869795e-03, 9.999421e-01, -4.278459e-03],
    [7.402527e-03, 4.351614e-03, 9.999631e-01],
])
KITTI_TR = np.array([
    [7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03],
    [1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02],
    [9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01],
])
KITTI_IMAGE_SIZE = (1242, 375)
CAMERA_HEIGHT = 1.65  # rectified camera above the road, meters

# velodyne axes expressed in camera axes: x_c = -y_v, y_c = -z_v, z_c = x_v
_VELO_TO_CAM_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def kitti_calibration() -> Calibration:
    return Calibration(KITTI_P2, KITTI_R0, KITTI_TR)


def random_calibration(rng: np.random.Generator) -> Calibration:
    """A valid calibration with exact rotations near the KITTI rig."""
    f = rng.uniform(500.0, 1000.0)
    p2 = np.array([
        [f, 0.0, rng.uniform(500, 700), rng.uniform(-50, 50)],
        [0.0, f * rng.uniform(0.98, 1.02), rng.uniform(150, 200), rng.uniform(-1, 1)],
        [0.0, 0.0, 1.0, rng.uniform(-0.01, 0.01)],
    ])
    r0 = Rotation.from_rotvec(rng.normal(0.0, 0.01, 3)).as_matrix()
    rot = Rotation.from_rotvec(rng.normal(0.0, 0.05, 3)).as_matrix() @ _VELO_TO_CAM_AXES
    t = rng.normal(0.0, 0.3, 3)
    return Calibration(p2, r0, np.hstack([rot, t[:, None]]))


def simple_calibration(fx=100.0, fy=100.0, cx=0.0, cy=0.0, t=(0.0, 0.0, 0.0), axes=False) -> Calibration:
    """Identity rectification; identity or KITTI-axis extrinsic rotation."""
    rot = _VELO_TO_CAM_AXES if axes else np.eye(3)
    p2 = np.array([[fx, 0, cx, 0], [0, fy, cy, 0], [0, 0, 1, 0]], dtype=float)
    return Calibration(p2, np.eye(3), np.hstack([rot, np.asarray(t, float)[:, None]]))


def random_box(rng: np.random.Generator, frame: str = "velodyne", spread: float = 5.0) -> Box3D:
    center = rng.uniform(-spread, spread, 3)
    dims = (rng.uniform(0.5, 6.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0))
    return Box3D(tuple(center), dims, rng.uniform(-math.pi, math.pi), frame)


def random_box_pair(rng: np.random.Generator, frame: str = "velodyne") -> tuple[Box3D, Box3D]:
    """Two boxes that usually overlap, sometimes not at all."""
    a = random_box(rng, frame)
    offset = rng.normal(0.0, 1.0, 3)
    dims = tuple(np.clip(np.array(a.dims) * rng.uniform(0.6, 1.4, 3), 0.2, None))
    yaw = a.yaw + rng.normal(0.0, 0.6) if rng.random() < 0.7 else rng.uniform(-math.pi, math.pi)
    b = Box3D(tuple(np.array(a.center) + offset), dims, yaw, frame)
    return a, b


# --- labelled scenes ---------------------------------------------------------

def _random_label(rng, class_name="Car", score=None) -> LabelRecord:
    left = rng.uniform(0, 1100)
    top = rng.uniform(0, 300)
    height_px = rng.choice([rng.uniform(15, 30), rng.uniform(25, 45), rng.uniform(40, 150)])
    width_px = rng.uniform(20, 200)
    h, w, l = rng.uniform(1.3, 1.8), rng.uniform(1.4, 1.9), rng.uniform(3.2, 4.8)
    return LabelRecord(
        class_name=class_name,
        truncation=float(rng.choice([0.0, 0.1, 0.2, 0.4, 0.6])),
        occlusion=int(rng.integers(0, 4)),
        alpha=float(rng.uniform(-math.pi, math.pi)),
        bbox2d=(left, top, left + width_px, top + height_px),
        dims=(h, w, l),
        location=(rng.uniform(-15, 15), rng.uniform(1.0, 2.0), rng.uniform(5, 70)),
        rotation_y=float(rng.uniform(-math.pi, math.pi)),
        score=score,
    )


def _perturbed_detection(rng, gt: LabelRecord, score: float) -> LabelRecord:
    x, y, z = gt.location
    h, w, l = gt.dims
    noise = rng.choice([0.05, 0.3, 1.0])
    return LabelRecord(
        class_name=gt.class_name, truncation=-1.0, occlusion=-1, alpha=gt.alpha,
        bbox2d=tuple(np.array(gt.bbox2d) + rng.normal(0, 3 * noise, 4) * [1, 1, 0, 0]),
        dims=tuple(np.clip(np.array([h, w, l]) * (1 + rng.normal(0, 0.1 * noise, 3)), 0.3, None)),
        location=(x + rng.normal(0, noise), y + rng.normal(0, 0.5 * noise), z + rng.normal(0, noise)),
        rotation_y=gt.rotation_y + rng.normal(0, 0.3 * noise),
        score=score,
    )


def random_scene(rng: np.random.Generator, max_boxes: int = 20, score_levels: int = 10,
                 with_distractors: bool = True):
    """One frame of GT labels and scored detections.

    Scores are drawn from a coarse grid so ties across and within frames occur.
    """
    n_gt = int(rng.integers(0, max_boxes // 2 + 1))
    gt = [_random_label(rng) for _ in range(n_gt)]
    if with_distractors:
        for _ in range(int(rng.integers(0, 3))):
            gt.append(_random_label(rng, class_name=str(rng.choice(["Van", "Pedestrian"]))))
        if rng.random() < 0.5:
            dc = _random_label(rng, class_name="DontCare")
            gt.append(LabelRecord("DontCare", -1, -1, -10, dc.bbox2d, (-1, -1, -1),
                                  (-1000, -1000, -1000), -10))
    def score():
        return float(rng.integers(1, score_levels + 1)) / score_levels

    det = []
    for g in gt:
        if g.class_name != "DontCare" and rng.random() < 0.75:
            det.append(_perturbed_detection(rng, g, score()))
    while len(det) < max_boxes and rng.random() < 0.5:
        det.append(_random_label(rng, score=score()))
    order = rng.permutation(len(det))
    det = [det[i] for i in order][:max_boxes]
    return gt, det


def gt_as_detections(labels, score: float = 1.0) -> list[LabelRecord]:
    return [
        LabelRecord(g.class_name, g.truncation, g.occlusion, g.alpha, g.bbox2d, g.dims,
                    g.location, g.rotation_y, score)
        for g in labels if g.class_name != "DontCare"
    ]


# --- fitter scenes -----------------------------------------------------------

def box_volume_points(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples filling a velodyne-frame box, (n, 3)."""
    l, w, h = box.dims
    local = rng.uniform(-0.5, 0.5, (n, 3)) * [l, w, h]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xy = local[:, :2] @ np.array([[c, -s], [s, c]]).T
    return np.column_stack([xy[:, 0] + box.center[0], xy[:, 1] + box.center[1], local[:, 2] + box.center[2]])


def box_camera_corners(box_cam: Box3D) -> np.ndarray:
    """(8, 3) corners of a camera-frame (bottom-centered) box."""
    l, w, h = box_cam.dims
    c, s = math.cos(box_cam.yaw), math.sin(box_cam.yaw)
    out = []
    for dl in (-0.5, 0.5):
        for dw in (-0.5, 0.5):
            for dh in (0.0, 1.0):
                gx = dl * l * c - dw * w * s
                gz_neg = dl * l * s + dw * w * c
                x, y, z = box_cam.center
                out.append((x + gx, y - dh * h, z - gz_neg))
    return np.array(out)


def label_for_box(box_cam: Box3D, calib: Calibration, class_name: str = "Car") -> LabelRecord:
    """GT label whose 2D box is the image-plane hull of the 3D corners."""
    u, v = project_to_image(box_camera_corners(box_cam), calib)
    l, w, h = box_cam.dims
    x, _, z = box_cam.center
    alpha = math.atan2(math.sin(box_cam.yaw - math.atan2(x, z)), math.cos(box_cam.yaw - math.atan2(x, z)))
    return LabelRecord(class_name, 0.0, 0, alpha, (u.min(), v.min(), u.max(), v.max()),
                       (h, w, l), box_cam.center, box_cam.yaw)


# --- rendered depth ----------------------------------------------------------

def _ray_box_hits(dirs: np.ndarray, box_cam: Box3D) -> np.ndarray:
    """Ray parameter of the first hit of camera rays with a box (inf on miss)."""
    l, w, h = box_cam.dims
    x, y, z = box_cam.center
    center = np.array([x, y - h / 2.0, z])
    c, s = math.cos(box_cam.yaw), math.sin(box_cam.yaw)
    # box axes in camera coordinates: length, height(down), width
    axes = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    half = np.array([l / 2.0, h / 2.0, w / 2.0])
    o = -center @ axes.T
    d = dirs @ axes.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (t_near <= t_far) & (t_far > 0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def render_depth(calib: Calibration, image_size: tuple[int, int], boxes_cam=(),
                 camera_height: float = CAMERA_HEIGHT, far: float = 80.0) -> np.ndarray:
    """Perfect depth (camera z) of a flat road plus boxes; 0 where nothing is hit."""
    width, height = image_size
    v, u = np.mgrid[0:height, 0:width]
    dirs = np.stack([(u.ravel() - calib.cx) / calib.fx, (v.ravel() - calib.cy) / calib.fy,
                     np.ones(u.size)], axis=1)
    with np.errstate(divide="ignore"):
        t = np.where(dirs[:, 1] > 0, camera_height / dirs[:, 1], np.inf)
    for box in boxes_cam:
        t = np.minimum(t, _ray_box_hits(dirs, box))
    depth = np.where(np.isfinite(t) & (t < far), t, 0.0)  # z component of dir is 1
    return depth.reshape(height, width)


def scene_car_boxes(rng: np.random.Generator, n: int, calib: Calibration,
                    image_size=KITTI_IMAGE_SIZE, dims_hwl=(1.53, 1.63, 3.88)) -> list[Box3D]:
    """Non-overlapping camera-frame cars resting on the road, inside the image."""
    h, w, l = dims_hwl
    boxes: list[Box3D] = []
    tries = 0
    while len(boxes) < n and tries < 200 * (n + 1):
        tries += 1
        z = rng.uniform(6.0, 45.0)
        x = rng.uniform(-0.35, 0.35) * z
        box = Box3D((x, CAMERA_HEIGHT, z), (l, w, h), rng.uniform(-math.pi, math.pi), "camera")
        u, _ = project_to_image(box_camera_corners(box), calib)
        if u.min() < 0 or u.max() > image_size[0]:
            continue
        if any(math.hypot(x - b.center[0], z - b.center[2]) < 6.0 for b in boxes):
            continue
        boxes.append(box)
    return boxes


def car_scene_cloud(calib: Calibration, yaw_velo: float = 0.3, n: int = 10_000, seed: int = 0,
                    dims_lwh=(3.9, 1.6, 1.56), forward: float = 15.0, lateral: float = 1.0):
    """Volumetric car cluster resting on the road plane, plus its GT label.

    Returns (points (n, 3) velodyne, gt velodyne Box3D, camera GT label).
    """
    rng = np.random.default_rng(seed)
    # road plane height in the velodyne frame below the chosen ground point
    cam_ground = velo_to_cam_xyz(np.array([[forward, lateral, 0.0]]), calib)[0]
    cam_ground[1] = CAMERA_HEIGHT
    l, w, h = dims_lwh
    box_cam = Box3D(tuple(cam_ground), (l, w, h), 0.0, "camera")
    velo_box = box_cam_to_velo(box_cam, calib)
    gt_velo = Box3D(velo_box.center, velo_box.dims, yaw_velo, "velodyne")
    pts = box_volume_points(gt_velo, n, rng)
    label = label_for_box(box_velo_to_cam(gt_velo, calib), calib)
    return pts, gt_velo, label


# --- toy dataset on disk -----------------------------------------------------

def _first_hit_masks(calib: Calibration, image_size, boxes_cam, depth: np.ndarray) -> list[np.ndarray]:
    width, height = image_size
    v, u = np.mgrid[0:height, 0:width]
    dirs = np.stack([(u.ravel() - calib.cx) / calib.fx, (v.ravel() - calib.cy) / calib.fy,
                     np.ones(u.size)], axis=1)
    flat = depth.ravel()
    masks = []
    for box in boxes_cam:
        t = _ray_box_hits(dirs, box)
        masks.append((np.isfinite(t) & (np.abs(t - flat) < 1e-6)).reshape(height, width))
    return masks


def write_toy_dataset(root, n_frames: int = 3, cars_per_frame: int = 3, seed: int = 0,
                      depth_noise: float = 0.0, image_size=KITTI_IMAGE_SIZE) -> list[str]:
    """Write a KITTI-layout dataset of rendered road scenes under ``root``.

    Creates calib/, label_2/, image_2/, depth/, conf/ and ImageSets/{train,val}.txt
    (both listing every frame). ``depth_noise`` adds Gaussian error growing
    with the square of range (meters at 10 m). Returns the frame ids.
    """
    from pathlib import Path

    from . import kitti_io

    root = Path(root)
    for sub in ("calib", "label_2", "image_2", "depth", "conf", "ImageSets"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    calib = kitti_calibration()
    ids = []
    for i in range(n_frames):
        fid = f"{i:06d}"
        boxes = scene_car_boxes(rng, cars_per_frame, calib, image_size)
        depth = render_depth(calib, image_size, boxes)
        masks = _first_hit_masks(calib, image_size, boxes, depth)
        if depth_noise > 0:
            noisy = depth + rng.normal(0.0, 1.0, depth.shape) * depth_noise * (depth / 10.0) ** 2
            depth = np.where(depth > 0, np.clip(noisy, 0.0, None), 0.0)
        depth_q = np.round(np.clip(depth, 0, 255.99) * 256.0) / 256.0

        gray = np.full(depth.shape, 90, dtype=np.uint8)
        gray[depth > 0] = 120
        instances = []
        for mask in masks:
            gray[mask] = 200
            instances.append((mask, float(rng.uniform(0.6, 0.99))))
        rgb = np.repeat(gray[:, :, None], 3, axis=2)

        (root / "calib" / f"{fid}.txt").write_text(kitti_io.serialize_calibration(calib))
        labels = [_clipped(label_for_box(b, calib), image_size) for b in boxes]
        (root / "label_2" / f"{fid}.txt").write_text(kitti_io.serialize_labels(labels))
        (root / "image_2" / f"{fid}.png").write_bytes(kitti_io.write_rgb_png(rgb))
        (root / "depth" / f"{fid}.png").write_bytes(
            kitti_io.write_depth_png(kitti_io.ScalarRaster(depth_q, "depth_m")))
        conf = _confidence(instances, depth.shape)
        (root / "conf" / f"{fid}.png").write_bytes(kitti_io.write_confidence_png(conf))
        ids.append(fid)
    listing = "".join(f + "\n" for f in ids)
    (root / "ImageSets" / "train.txt").write_text(listing)
    (root / "ImageSets" / "val.txt").write_text(listing)
    return ids


def _clipped(label: LabelRecord, image_size) -> LabelRecord:
    import dataclasses

    l, t, r, b = label.bbox2d
    w, h = image_size
    cl, ct, cr, cb = max(l, 0.0), max(t, 0.0), min(r, w - 1.0), min(b, h - 1.0)
    trunc = 1.0 - (cr - cl) * (cb - ct) / ((r - l) * (b - t))
    return dataclasses.replace(label, bbox2d=(cl, ct, cr, cb), truncation=round(min(max(trunc, 0.0), 1.0), 2))


def _confidence(instances, shape):
    from .cloud import build_confidence_map

    return build_confidence_map(instances, shape)
