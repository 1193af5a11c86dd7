"""Pseudo-LiDAR construction from a depth map plus an optional feature map.

Every experimental variant shares the same geometry path (depth filter,
back-projection, camera -> velodyne) and differs only in the 4th channel and
in how points are selected before the fixed point budget is applied.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyCloud, LengthMismatch, MissingFeatureRaster, RasterSizeMismatch
from .geometry import PointCloud, cam_to_velo_xyz, unproject_pixels
from .kitti_io import Calibration, ScalarRaster


class ChannelMode(str, enum.Enum):
    GRAYSCALE = "grayscale"
    MASK_CONFIDENCE = "mask_confidence"
    ZERO = "zero"


class SamplingMode(str, enum.Enum):
    FULL_SCENE = "full_scene"
    MASK_GUIDED = "mask_guided"


@dataclass(frozen=True)
class VariantConfig:
    channel_mode: ChannelMode = ChannelMode.GRAYSCALE
    sampling_mode: SamplingMode = SamplingMode.FULL_SCENE
    num_points: int = 16384
    depth_min: float = 1.0
    depth_max: float = 60.0
    mask_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel_mode", ChannelMode(self.channel_mode))
        object.__setattr__(self, "sampling_mode", SamplingMode(self.sampling_mode))
        if not self.depth_min < self.depth_max:
            raise ValueError("depth_min must be below depth_max")
        if int(self.num_points) <= 0:
            raise ValueError("num_points must be positive")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ValueError("mask_threshold must lie in [0, 1]")

    @property
    def needs_confidence(self) -> bool:
        return (
            self.channel_mode is ChannelMode.MASK_CONFIDENCE
            or self.sampling_mode is SamplingMode.MASK_GUIDED
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channel_mode"] = self.channel_mode.value
        d["sampling_mode"] = self.sampling_mode.value
        return d


VARIANTS = {
    "exp2": VariantConfig(ChannelMode.GRAYSCALE, SamplingMode.FULL_SCENE, 16384),
    "exp4": VariantConfig(ChannelMode.MASK_CONFIDENCE, SamplingMode.FULL_SCENE, 16384),
    "exp5": VariantConfig(ChannelMode.GRAYSCALE, SamplingMode.MASK_GUIDED, 40000),
    "exp7": VariantConfig(ChannelMode.ZERO, SamplingMode.FULL_SCENE, 16384),
}


def frame_rng(seed: int, frame_id: int = 0) -> np.random.Generator:
    """Per-frame generator, independent of how frames are batched."""
    return np.random.default_rng(int(seed) ^ int(frame_id))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class PseudoLidarResult:
    cloud: PointCloud
    pixel_index: np.ndarray  # flat (v * width + u) index of the source pixel per point
    stats: dict


def depth_to_points(
    depth: ScalarRaster, calib: Calibration, depth_min: float = 1.0, depth_max: float = 60.0
) -> tuple[np.ndarray, np.ndarray]:
    """Back-project every pixel with ``depth_min < D < depth_max``.

    Returns velodyne-frame (N, 3) float64 points and the flat pixel index of
    each point, in row-major scan order.
    """
    d = depth.values
    flat = np.flatnonzero((d > depth_min) & (d < depth_max))
    v, u = np.divmod(flat, depth.width)
    cam = unproject_pixels(u, v, d.ravel()[flat], calib)
    return cam_to_velo_xyz(cam, calib), flat


def _subsample_index(n_have: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n_have, size=n, replace=False))


def _budget_index(n_have: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n_have == 0:
        raise EmptyCloud("cannot sample from an empty cloud")
    if n_have > n:
        return _subsample_index(n_have, n, rng)
    base = np.arange(n_have)
    if n_have == n:
        return base
    return np.concatenate([base, rng.choice(n_have, size=n - n_have, replace=True)])


def sample_to_budget(points: PointCloud, n: int, seed=0) -> PointCloud:
    """Return exactly ``n`` points.

    Larger clouds are subsampled uniformly without replacement (scan order is
    kept); smaller clouds keep every point and are padded with duplicates
    drawn uniformly with replacement.
    """
    return points.take(_budget_index(len(points), int(n), _as_rng(seed)))


def _mask_guided_index(conf: np.ndarray, threshold: float, n: int, rng) -> tuple[np.ndarray, int]:
    fg = np.flatnonzero(conf > threshold)
    bg = np.flatnonzero(conf <= threshold)
    if len(fg) >= n:
        return fg[_subsample_index(len(fg), n, rng)], n
    n_bg = min(n - len(fg), len(bg))
    picked_bg = bg[_subsample_index(len(bg), n_bg, rng)]
    return np.sort(np.concatenate([fg, picked_bg])), len(fg)


def mask_guided_select(points: PointCloud, per_point_conf, cfg: VariantConfig, seed=None) -> PointCloud:
    """Keep foreground (conf > threshold) points, fill the budget with background.

    If the foreground alone exceeds ``cfg.num_points`` it is subsampled down to
    the budget and no background survives. The result may still be smaller
    than the budget; :func:`sample_to_budget` pads it afterwards.
    """
    conf = np.asarray(per_point_conf, dtype=np.float64).ravel()
    if len(conf) != len(points):
        raise LengthMismatch(f"{len(conf)} confidences for {len(points)} points")
    rng = _as_rng(cfg.seed if seed is None else seed)
    idx, _ = _mask_guided_index(conf, cfg.mask_threshold, cfg.num_points, rng)
    return points.take(idx)


def _check_raster(r: ScalarRaster | None, depth: ScalarRaster, what: str) -> None:
    if r is not None and r.shape != depth.shape:
        raise RasterSizeMismatch(f"{what} raster {r.shape} != depth raster {depth.shape}")


def build_pseudolidar_detailed(
    depth: ScalarRaster,
    feature: ScalarRaster | None,
    calib: Calibration,
    cfg: VariantConfig,
    confidence: ScalarRaster | None = None,
    frame_id: int = 0,
) -> PseudoLidarResult:
    """Build a velodyne-frame pseudo-LiDAR cloud for one frame.

    ``feature`` fills the intensity channel (grayscale or confidence map, as
    the channel mode demands; ignored for the zero channel). ``confidence``
    drives mask-guided sampling and defaults to ``feature`` when that is a
    confidence map.
    """
    if confidence is None and feature is not None and feature.semantics == "confidence01":
        confidence = feature
    _check_raster(feature, depth, "feature")
    _check_raster(confidence, depth, "confidence")

    mode = cfg.channel_mode
    if mode is ChannelMode.GRAYSCALE and feature is None:
        raise MissingFeatureRaster("grayscale channel needs a grayscale raster")
    if mode is ChannelMode.MASK_CONFIDENCE and feature is None:
        raise MissingFeatureRaster("mask-confidence channel needs a confidence raster")
    if cfg.sampling_mode is SamplingMode.MASK_GUIDED and confidence is None:
        raise MissingFeatureRaster("mask-guided sampling needs a confidence raster")

    xyz, pix = depth_to_points(depth, calib, cfg.depth_min, cfg.depth_max)
    if len(pix) == 0:
        raise EmptyCloud(f"no pixels with {cfg.depth_min} < depth < {cfg.depth_max}")

    if mode is ChannelMode.ZERO:
        intensity = np.zeros(len(pix))
    else:
        intensity = feature.values.ravel()[pix]

    rng = frame_rng(cfg.seed, frame_id)
    stats = {
        "n_pixels": int(depth.values.size),
        "n_valid_depth": int(len(pix)),
    }
    if cfg.sampling_mode is SamplingMode.MASK_GUIDED:
        conf = confidence.values.ravel()[pix]
        sel, n_fg = _mask_guided_index(conf, cfg.mask_threshold, cfg.num_points, rng)
        stats["n_foreground"] = int(np.count_nonzero(conf > cfg.mask_threshold))
        stats["n_foreground_kept"] = int(n_fg)
        stats["n_selected"] = int(len(sel))
    else:
        sel = np.arange(len(pix))
    sel = sel[_budget_index(len(sel), cfg.num_points, rng)]
    stats["n_points"] = int(len(sel))

    pts = np.empty((len(sel), 4), dtype=np.float32)
    pts[:, :3] = xyz[sel]
    pts[:, 3] = np.clip(intensity[sel], 0.0, 1.0)
    return PseudoLidarResult(PointCloud(pts, "velodyne"), pix[sel], stats)


def build_pseudolidar(
    depth: ScalarRaster,
    feature: ScalarRaster | None,
    calib: Calibration,
    cfg: VariantConfig,
    confidence: ScalarRaster | None = None,
    frame_id: int = 0,
) -> PointCloud:
    return build_pseudolidar_detailed(depth, feature, calib, cfg, confidence, frame_id).cloud


def build_confidence_map(
    instances: Sequence[tuple[np.ndarray, float]], shape: tuple[int, int] | None = None
) -> ScalarRaster:
    """Per-pixel car confidence: each mask carries its instance score, max over overlaps."""
    if shape is None:
        if not instances:
            raise ValueError("shape is required when there are no instances")
        shape = np.shape(instances[0][0])
    out = np.zeros(shape, dtype=np.float32)
    for mask, score in instances:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != tuple(shape):
            raise RasterSizeMismatch(f"mask {mask.shape} != raster {tuple(shape)}")
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"instance score {score} outside [0, 1]")
        np.maximum(out, np.where(mask, np.float32(score), np.float32(0)), out=out)
    return ScalarRaster(out, "confidence01")
