"""Build Exp 2/4/5/7 pseudo-LiDAR clouds for one dataset and compare them.

    python scripts/run_variants.py data/toy --out runs/variants
"""

import argparse
import json
from pathlib import Path

import numpy as np

from pseudolidar import kitti_io
from pseudolidar.cli import main as cli

VARIANT_NAMES = ("exp2", "exp4", "exp5", "exp7")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    ap.add_argument("--out", default="runs/variants")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    for name in VARIANT_NAMES:
        code = cli(["convert", "--dataset-root", args.root, "--variant", name,
                    "--seed", str(args.seed), "--out", str(out / name)])
        if code != 0:
            raise SystemExit(f"convert {name} failed with exit code {code}")

    print("variant  frames  points/frame  mean intensity  foreground share")
    for name in VARIANT_NAMES:
        manifest = [json.loads(line) for line in
                    (out / name / "velodyne_pseudo/manifest.jsonl").read_text().splitlines()]
        inten, fg = [], []
        for m in manifest:
            cloud = kitti_io.read_pointcloud_bin((out / name / "velodyne_pseudo" / f"{m['frame_id']}.bin").read_bytes())
            inten.append(float(cloud.intensity.mean()))
            if "n_foreground_kept" in m["stats"]:
                fg.append(m["stats"]["n_foreground_kept"] / m["point_count"])
        share = f"{np.mean(fg):.3f}" if fg else "--"
        print(f"{name:7}  {len(manifest):6}  {manifest[0]['point_count']:12}  {np.mean(inten):14.3f}  {share:>16}")


if __name__ == "__main__":
    main()
