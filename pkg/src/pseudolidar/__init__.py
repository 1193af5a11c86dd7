"""Monocular pseudo-LiDAR toolkit: point-cloud construction, frustum box
fitting and KITTI-style evaluation."""

from .cloud import VARIANTS, ChannelMode, SamplingMode, VariantConfig, build_pseudolidar
from .fitter import FitterConfig, SizePriors, compute_size_priors, exp0_detect
from .geometry import Box3D, PointCloud, cam_to_velo, iou_3d, iou_bev, velo_to_cam
from .kitti_io import Calibration, LabelRecord, ScalarRaster, parse_calibration, parse_labels
from .metrics import ap40, depth_diagnostic, evaluate

__all__ = [
    "VARIANTS", "ChannelMode", "SamplingMode", "VariantConfig", "build_pseudolidar",
    "FitterConfig", "SizePriors", "compute_size_priors", "exp0_detect",
    "Box3D", "PointCloud", "cam_to_velo", "iou_3d", "iou_bev", "velo_to_cam",
    "Calibration", "LabelRecord", "ScalarRaster", "parse_calibration", "parse_labels",
    "ap40", "depth_diagnostic", "evaluate",
]
