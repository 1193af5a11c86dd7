"""Write a small KITTI-layout dataset of rendered road scenes.

    python scripts/make_toy_dataset.py data/toy --frames 20 --depth-noise 0.3
"""

import argparse

from pseudolidar.synthetic import write_toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root")
    ap.add_argument("--frames", type=int, default=10)
    ap.add_argument("--cars", type=int, default=3, help="cars per frame")
    ap.add_argument("--depth-noise", type=float, default=0.0,
                    help="depth error std (m) at 10 m, grows with range squared")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ids = write_toy_dataset(args.root, args.frames, args.cars, args.seed, args.depth_noise)
    print(f"wrote {len(ids)} frames to {args.root}")


if __name__ == "__main__":
    main()
