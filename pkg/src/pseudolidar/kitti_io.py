"""Readers and writers for the KITTI object-benchmark file formats.

Coordinate conventions:
    rect camera: x right, y down, z forward
    velodyne:    x forward, y left, z up

Files handled here:
    calib/XXXXXX.txt        P0..P3, R0_rect, Tr_velo_to_cam, Tr_imu_to_velo
    label_2/XXXXXX.txt      15 fields per object (16 with a detection score)
    depth/XXXXXX.png        uint16, meters = raw / 256, 0 = invalid
    conf/XXXXXX.png         uint16, probability = raw / 65535
    velodyne*/XXXXXX.bin    little-endian float32 (x, y, z, intensity)
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import (
    InvalidCalibration,
    MalformedNumber,
    MissingKey,
    NotPng,
    TruncatedFile,
    WrongArity,
    WrongBitDepth,
    WrongChannelCount,
    WrongFieldCount,
)
from .geometry import PointCloud

CLASS_NAMES = (
    "Car", "Pedestrian", "Cyclist", "Van", "Truck",
    "Person_sitting", "Tram", "Misc", "DontCare",
)

_CALIB_ARITY = {
    "P0": 12, "P1": 12, "P2": 12, "P3": 12,
    "R0_rect": 9, "Tr_velo_to_cam": 12, "Tr_imu_to_velo": 12,
}
# tracking-benchmark spellings
_CALIB_ALIASES = {"R_rect": "R0_rect", "Tr_velo_cam": "Tr_velo_to_cam", "Tr_imu_velo": "Tr_imu_to_velo"}
_REQUIRED_KEYS = ("P2", "R0_rect", "Tr_velo_to_cam")
_ROTATION_TOL = 1e-4

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_DEPTH_SCALE = 256.0
_CONF_SCALE = 65535.0


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def check_rotation(r: np.ndarray, name: str, tol: float = _ROTATION_TOL) -> None:
    if abs(np.linalg.det(r) - 1.0) >= tol or np.abs(r @ r.T - np.eye(3)).max() >= tol:
        raise InvalidCalibration(f"{name} is not a rotation matrix")


@dataclass(frozen=True, eq=False)
class Calibration:
    """Per-frame camera/LiDAR calibration.

    ``p2`` projects rectified camera coordinates into the left color image,
    ``r0_rect`` rectifies the reference camera frame and ``tr_velo_to_cam``
    maps Velodyne points into the (unrectified) reference camera frame.
    """

    p2: np.ndarray
    r0_rect: np.ndarray
    tr_velo_to_cam: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        p2 = _frozen(self.p2).reshape(3, 4)
        r0 = _frozen(self.r0_rect).reshape(3, 3)
        tr = _frozen(self.tr_velo_to_cam).reshape(3, 4)
        object.__setattr__(self, "p2", p2)
        object.__setattr__(self, "r0_rect", r0)
        object.__setattr__(self, "tr_velo_to_cam", tr)
        object.__setattr__(
            self, "extras", {k: _frozen(v) for k, v in dict(self.extras).items()}
        )
        if not (p2[0, 0] > 0 and p2[1, 1] > 0):
            raise InvalidCalibration("focal lengths must be positive")
        check_rotation(r0, "R0_rect")
        check_rotation(tr[:, :3], "Tr_velo_to_cam")

    @property
    def fx(self) -> float:
        return float(self.p2[0, 0])

    @property
    def fy(self) -> float:
        return float(self.p2[1, 1])

    @property
    def cx(self) -> float:
        return float(self.p2[0, 2])

    @property
    def cy(self) -> float:
        return float(self.p2[1, 2])

    def same_as(self, other: "Calibration", atol: float = 0.0) -> bool:
        return (
            np.allclose(self.p2, other.p2, rtol=0, atol=atol)
            and np.allclose(self.r0_rect, other.r0_rect, rtol=0, atol=atol)
            and np.allclose(self.tr_velo_to_cam, other.tr_velo_to_cam, rtol=0, atol=atol)
        )


def parse_calibration(text: str) -> Calibration:
    values: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if ":" in line:
            key, rest = line.split(":", 1)
        else:
            key, _, rest = line.partition(" ")
        key = _CALIB_ALIASES.get(key.strip(), key.strip())
        try:
            nums = [float(tok) for tok in rest.split()]
        except ValueError:
            raise MalformedNumber(line_no) from None
        expected = _CALIB_ARITY.get(key)
        if expected is not None and len(nums) != expected:
            raise WrongArity(key, expected, len(nums))
        values[key] = np.array(nums)

    for key in _REQUIRED_KEYS:
        if key not in values:
            raise MissingKey(key)
    extras = {k: v for k, v in values.items() if k not in _REQUIRED_KEYS}
    return Calibration(
        p2=values["P2"], r0_rect=values["R0_rect"],
        tr_velo_to_cam=values["Tr_velo_to_cam"], extras=extras,
    )


def serialize_calibration(calib: Calibration) -> str:
    # KITTI writes %.12e; far below the 1e-6 round-trip budget
    rows = dict(calib.extras)
    rows["P2"] = calib.p2
    rows["R0_rect"] = calib.r0_rect
    rows["Tr_velo_to_cam"] = calib.tr_velo_to_cam
    order = ["P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam", "Tr_imu_to_velo"]
    keys = [k for k in order if k in rows] + sorted(k for k in rows if k not in order)
    lines = [
        f"{k}: " + " ".join(f"{v:.12e}" for v in np.ravel(rows[k])) for k in keys
    ]
    return "\n".join(lines) + "\n"


def _wrap_angle(a: float) -> float:
    """Wrap into [-pi, pi], leaving values already in range untouched."""
    if -math.pi <= a <= math.pi:
        return a
    return math.atan2(math.sin(a), math.cos(a))


@dataclass(frozen=True)
class LabelRecord:
    """One line of a KITTI label or detection file.

    ``dims`` is (height, width, length) and ``location`` is the bottom-face
    center in rectified camera coordinates, both following the file layout.
    Detection files conventionally carry ``truncation = occlusion = -1``.
    """

    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dims: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    score: float | None = None

    def __post_init__(self):
        if self.class_name not in CLASS_NAMES:
            raise ValueError(f"unknown class {self.class_name!r}")
        object.__setattr__(self, "bbox2d", tuple(float(v) for v in self.bbox2d))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        ry = float(self.rotation_y)
        object.__setattr__(self, "rotation_y", ry if self.class_name == "DontCare" else _wrap_angle(ry))
        object.__setattr__(self, "occlusion", int(self.occlusion))
        if self.class_name != "DontCare":
            left, top, right, bottom = self.bbox2d
            if not (right > left and bottom > top):
                raise ValueError(f"degenerate 2D box {self.bbox2d}")
        # DontCare rows carry -1 / -1000 placeholders for the 3D fields
        if self.class_name != "DontCare" and min(self.dims) < 0:
            raise ValueError(f"negative dimensions {self.dims}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def height_px(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


def _parse_float(tok: str, line_no: int, field_no: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise MalformedNumber(line_no, field_no) from None


def parse_labels(text: str, require_score: bool = False) -> list[LabelRecord]:
    """Parse a label (15 fields) or detection (16 fields) file.

    With ``require_score`` every line must carry the trailing score; without
    it every line must have exactly 15 fields.
    """
    expected = 16 if require_score else 15
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != expected:
            raise WrongFieldCount(line_no, expected, len(toks))
        nums = [_parse_float(t, line_no, i) for i, t in enumerate(toks[1:], start=1)]
        occ = nums[1]
        if occ != int(occ):
            raise MalformedNumber(line_no, 2)
        try:
            rec = LabelRecord(
                class_name=toks[0],
                truncation=nums[0],
                occlusion=int(occ),
                alpha=nums[2],
                bbox2d=tuple(nums[3:7]),
                dims=tuple(nums[7:10]),
                location=tuple(nums[10:13]),
                rotation_y=nums[13],
                score=nums[14] if require_score else None,
            )
        except ValueError as exc:
            raise MalformedNumber(line_no) from exc
        records.append(rec)
    return records


def serialize_labels(records: Iterable[LabelRecord]) -> str:
    lines = []
    for r in records:
        vals = [r.truncation, r.occlusion, r.alpha, *r.bbox2d, *r.dims, *r.location, r.rotation_y]
        fields = [r.class_name, f"{vals[0]:.6f}", str(r.occlusion)]
        fields += [f"{v:.6f}" for v in vals[2:]]
        if r.score is not None:
            fields.append(f"{r.score:.6f}")
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


SEMANTICS = ("depth_m", "grayscale01", "confidence01")


@dataclass(frozen=True, eq=False)
class ScalarRaster:
    """Dense per-pixel float32 map stored row-major as ``values[v, u]``."""

    values: np.ndarray
    semantics: str

    def __post_init__(self):
        if self.semantics not in SEMANTICS:
            raise ValueError(f"unknown raster semantics {self.semantics!r}")
        vals = np.array(self.values, dtype=np.float32)
        if vals.ndim != 2:
            raise ValueError("raster must be two-dimensional")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.semantics == "depth_m":
            if (vals < 0).any():
                raise ValueError("depth values must be >= 0")
        elif vals.size and (vals.min() < 0 or vals.max() > 1):
            raise ValueError(f"{self.semantics} values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _png_header(data: bytes) -> tuple[int, int]:
    """Return (bit_depth, color_type) from the IHDR chunk."""
    if len(data) < 33 or data[:8] != _PNG_SIGNATURE or data[12:16] != b"IHDR":
        raise NotPng("not a PNG stream")
    bit_depth, color_type = struct.unpack(">BB", data[24:26])
    return bit_depth, color_type


def _read_u16_png(data: bytes) -> np.ndarray:
    bit_depth, color_type = _png_header(data)
    if color_type != 0:
        raise WrongChannelCount(f"expected single-channel grayscale, got color type {color_type}")
    if bit_depth != 16:
        raise WrongBitDepth(f"expected 16-bit PNG, got {bit_depth}-bit")
    with Image.open(io.BytesIO(data)) as im:
        return np.array(im, dtype=np.uint16)


def _write_u16_png(raw: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raw, dtype=np.uint16)).save(buf, format="PNG")
    return buf.getvalue()


def read_depth_png(data: bytes) -> ScalarRaster:
    raw = _read_u16_png(data)
    return ScalarRaster(raw.astype(np.float32) / np.float32(_DEPTH_SCALE), "depth_m")


def write_depth_png(raster: ScalarRaster) -> bytes:
    raw = np.clip(np.rint(raster.values.astype(np.float64) * _DEPTH_SCALE), 0, 65535)
    return _write_u16_png(raw.astype(np.uint16))


def read_confidence_png(data: bytes) -> ScalarRaster:
    raw = _read_u16_png(data)
    return ScalarRaster(raw.astype(np.float32) / np.float32(_CONF_SCALE), "confidence01")


def write_confidence_png(raster: ScalarRaster) -> bytes:
    raw = np.clip(np.rint(raster.values.astype(np.float64) * _CONF_SCALE), 0, 65535)
    return _write_u16_png(raw.astype(np.uint16))


def read_rgb_png(data: bytes) -> np.ndarray:
    """Decode an 8-bit color image into an (H, W, 3) uint8 array."""
    bit_depth, color_type = _png_header(data)
    if bit_depth != 8:
        raise WrongBitDepth(f"expected 8-bit PNG, got {bit_depth}-bit")
    if color_type not in (2, 6):
        raise WrongChannelCount(f"expected RGB(A) image, got color type {color_type}")
    with Image.open(io.BytesIO(data)) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_rgb_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def rgb_to_grayscale(image: np.ndarray) -> ScalarRaster:
    """BT.601 luma of an 8-bit RGB image, scaled to [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise WrongChannelCount(f"expected (H, W, 3) image, got shape {image.shape}")
    rgb = image.astype(np.float64)
    luma = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
    return ScalarRaster(np.clip(luma, 0.0, 1.0), "grayscale01")


def write_pointcloud_bin(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def read_pointcloud_bin(data: bytes, frame: str = "velodyne") -> PointCloud:
    if len(data) % 16:
        raise TruncatedFile(f"{len(data)} bytes is not a whole number of points")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(pts.astype(np.float32), frame)
