"""Render a few synthetic scenes with their ground truth drawn on top.

    python3 demos/show_scenes.py --count 4 --out scenes
"""

import argparse
import os

from centermask.imaging import overlay, write_png
from centermask.synth import generate_sample


class _Shown:
    # just enough of an inference result for the overlay
    def __init__(self, inst):
        self.box, self.label, self.mask = inst.box, inst.label, inst.mask
        self.recalibrated_score = 1.0


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", default="scenes")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for s in range(args.seed, args.seed + args.count):
        sample = generate_sample(s, args.size, args.size)
        path = os.path.join(args.out, f"scene_{s:04d}.png")
        write_png(path, overlay(sample.pixels, [_Shown(i) for i in sample.instances]))
        print(path, [(i.label, [round(float(v)) for v in i.box]) for i in sample.instances])


if __name__ == "__main__":
    main()
