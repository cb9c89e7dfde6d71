#!/usr/bin/env python3
"""Rebuild data/mnist/ from the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/build_mnist_subset.py package/src/digits data/mnist

Every fifth digit of each class goes to the test split (1,996 images); the
remaining 8,004 form the training split. Pixel values in the package are
rounded to three decimals, so bytes are recovered as round(v * 255).
Output files use the canonical MNIST names and gzip framing, so the full
60k/10k distribution can be dropped in their place.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def dump(out_dir, prefix, samples):
    img = struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE)
    img += b"".join(bytes(px) for px, _ in samples)
    lbl = struct.pack(">II", 0x00000801, len(samples)) + bytes(lab for _, lab in samples)
    for name, payload in ((f"{prefix}-images-idx3-ubyte.gz", img), (f"{prefix}-labels-idx1-ubyte.gz", lbl)):
        with gzip.GzipFile(out_dir / name, "wb", mtime=0) as f:
            f.write(payload)


def main():
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for label in range(10):
        raw = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        count = len(raw) // (SIDE * SIDE)
        for i in range(count):
            chunk = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            px = [min(255, max(0, round(v * 255))) for v in chunk]
            (test if i % 5 == 4 else train).append((px, label))
    rng = random.Random(20230201)
    rng.shuffle(train)
    rng.shuffle(test)
    dump(out_dir, "train", train)
    dump(out_dir, "t10k", test)
    print(f"train={len(train)} test={len(test)}")


if __name__ == "__main__":
    main()
