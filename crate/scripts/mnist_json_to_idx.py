#!/usr/bin/env python3
"""Convert the 10k-digit JSON dump of the `mnist` npm package to IDX files.

Usage: mnist_json_to_idx.py <package>/src/digits <out-dir> [--seed N]

Each class is shuffled with a fixed seed and split 80/20 into train and
test; both splits are then shuffled again so classes interleave.
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--test-fraction", type=float, default=0.2)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(10):
        flat = np.asarray(json.loads((args.digits / f"{c}.json").read_text())["data"], dtype=np.float64)
        pixels = np.rint(flat * 255.0).clip(0, 255).reshape(-1, 784)
        pixels = pixels[rng.permutation(len(pixels))]
        n_test = int(round(args.test_fraction * len(pixels)))
        test_x.append(pixels[:n_test])
        train_x.append(pixels[n_test:])
        test_y.append(np.full(n_test, c))
        train_y.append(np.full(len(pixels) - n_test, c))

    args.out.mkdir(parents=True, exist_ok=True)
    for name, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(len(y))
        write_images(args.out / f"{name}-images-idx3-ubyte", x[order])
        write_labels(args.out / f"{name}-labels-idx1-ubyte", y[order])
        print(f"{name}: {len(y)} samples")


if __name__ == "__main__":
    main()
