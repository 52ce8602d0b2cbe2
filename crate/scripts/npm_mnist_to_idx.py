#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into gzipped IDX files.

The npm package ships 10,000 MNIST digits as JSON arrays of pixel intensities
rounded to three decimals. This script restores the byte values, shuffles the
pool with a fixed seed and writes an 8,000 / 2,000 train/test split using the
standard MNIST file names.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/npm_mnist_to_idx.py package/src/digits data/mnist-desk
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
TRAIN = 8000
SEED = 20211


def write_gz(path, payload):
    # mtime=0 keeps the archive byte-identical across runs
    with open(path, "wb") as raw:
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
            gz.write(payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(data) // (SIDE * SIDE)
        for k in range(n):
            px = data[k * SIDE * SIDE:(k + 1) * SIDE * SIDE]
            samples.append((digit, bytes(min(255, max(0, round(v * 255))) for v in px)))
    random.Random(SEED).shuffle(samples)
    splits = {"train": samples[:TRAIN], "t10k": samples[TRAIN:]}
    for name, rows in splits.items():
        images = struct.pack(">IIII", 2051, len(rows), SIDE, SIDE) + b"".join(p for _, p in rows)
        labels = struct.pack(">II", 2049, len(rows)) + bytes(d for d, _ in rows)
        write_gz(dst / f"{name}-images-idx3-ubyte.gz", images)
        write_gz(dst / f"{name}-labels-idx1-ubyte.gz", labels)
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
