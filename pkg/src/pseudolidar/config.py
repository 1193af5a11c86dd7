"""Declarative run configuration (YAML or JSON) with CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cloud import VARIANTS, VariantConfig
from .fitter import FitterConfig

_FRAME_ID = re.compile(r"^\d{6}$")


class ConfigError(Exception):
    pass


@dataclass
class EvalOptions:
    classes: tuple = ("Car",)
    iou_thresholds: tuple = (0.5, 0.7)
    dontcare_mode: str = "official"
    criteria: str = "kitti"
    depth_threshold_m: float = 1.5
    depth_buckets: tuple = (20.0, 40.0, 80.0)


@dataclass
class RunConfig:
    dataset_root: Path
    split_file: Path
    output_dir: Path = Path("out")
    train_split_file: Path | None = None
    variant_name: str = "exp2"
    variant: VariantConfig = field(default_factory=lambda: VARIANTS["exp2"])
    fitter: FitterConfig = field(default_factory=FitterConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    detections_dir: Path | None = None
    seed: int = 0
    jobs: int = 1
    tolerate_frame_errors: bool = False

    # KITTI object layout under dataset_root
    @property
    def calib_dir(self) -> Path:
        return self.dataset_root / "calib"

    @property
    def label_dir(self) -> Path:
        return self.dataset_root / "label_2"

    @property
    def image_dir(self) -> Path:
        return self.dataset_root / "image_2"

    @property
    def depth_dir(self) -> Path:
        return self.dataset_root / "depth"

    @property
    def conf_dir(self) -> Path:
        return self.dataset_root / "conf"

    @property
    def cloud_dir(self) -> Path:
        return self.output_dir / "velodyne_pseudo"

    @property
    def det_dir(self) -> Path:
        return self.detections_dir or self.output_dir / "detections"

    def frame_ids(self, split_file: Path | None = None) -> list[str]:
        path = split_file or self.split_file
        ids = [line.strip() for line in path.read_text().splitlines() if line.strip()]
        bad = [i for i in ids if not _FRAME_ID.match(i)]
        if bad:
            raise ConfigError(f"{path}: frame ids must be 6-digit strings, got {bad[:3]}")
        return ids

    def to_dict(self) -> dict:
        return {
            "dataset_root": str(self.dataset_root),
            "split_file": str(self.split_file),
            "train_split_file": None if self.train_split_file is None else str(self.train_split_file),
            "output_dir": str(self.output_dir),
            "variant_name": self.variant_name,
            "variant": self.variant.to_dict(),
            "fitter": self.fitter.to_dict(),
            "eval": {k: list(v) if isinstance(v, tuple) else v
                     for k, v in dataclasses.asdict(self.eval).items()},
            "detections_dir": None if self.detections_dir is None else str(self.detections_dir),
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        # jobs, error tolerance and where results are written do not change them
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        if not self.dataset_root.is_dir():
            raise ConfigError(f"dataset root {self.dataset_root} does not exist")
        for p in (self.split_file, self.train_split_file):
            if p is not None and not p.is_file():
                raise ConfigError(f"split file {p} does not exist")
        self.frame_ids()
        if self.eval.dontcare_mode not in ("official", "simple"):
            raise ConfigError(f"unknown dontcare mode {self.eval.dontcare_mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a YAML/JSON file plus flat overrides.

    Relative split paths resolve against ``dataset_root``; other relative
    paths against the config file's directory.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        root = _resolve(base, raw["dataset_root"])
        split = raw.get("split_file", "ImageSets/val.txt")
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from None

    variant_raw = raw.get("variant", "exp2")
    seed = int(raw.get("seed", 0))
    try:
        if isinstance(variant_raw, str):
            if variant_raw not in VARIANTS:
                raise ConfigError(f"unknown variant {variant_raw!r}")
            name = variant_raw
            params = VARIANTS[variant_raw].to_dict()
        else:
            params = dict(VARIANTS[variant_raw.get("base", "exp2")].to_dict())
            params.update({k: v for k, v in variant_raw.items() if k not in ("base", "name")})
            name = variant_raw.get("name", "custom")
        params["seed"] = seed
        variant = VariantConfig(**params)
        fitter = FitterConfig(**raw.get("fitter", {}))
        ev = dict(raw.get("eval", {}))
        if "dontcare_mode" in raw:
            ev["dontcare_mode"] = raw["dontcare_mode"]
        for key in ("classes", "iou_thresholds", "depth_buckets"):
            if key in ev:
                ev[key] = tuple(ev[key])
        eval_opts = EvalOptions(**ev)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    cfg = RunConfig(
        dataset_root=root,
        split_file=_resolve(root, split),
        output_dir=_resolve(base, raw.get("output_dir", "out")),
        train_split_file=_resolve(root, raw.get("train_split_file")),
        variant_name=name,
        variant=variant,
        fitter=fitter,
        eval=eval_opts,
        detections_dir=_resolve(base, raw.get("detections_dir")),
        seed=seed,
        jobs=int(raw.get("jobs", 1)),
        tolerate_frame_errors=bool(raw.get("tolerate_frame_errors", False)),
    )
    cfg.validate()
    return cfg
