#!/usr/bin/env python3
"""Write MNIST digits as IDX files (images idx3-ubyte, labels idx1-ubyte).

The npm package `mnist` ships ~10k MNIST digits as JSON arrays of grayscale
values in [0, 1]. This script converts them into the standard big-endian IDX
layout so `load_idx` can consume them like the original distribution files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist
"""
import json
import os
import struct
import sys


def main(argv):
    if len(argv) != 3:
        print("usage: make_mnist_subset.py <digits-json-dir> <out-dir>", file=sys.stderr)
        return 1
    src, out = argv[1], argv[2]
    os.makedirs(out, exist_ok=True)
    per_class = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            values = json.load(fh)["data"]
        if len(values) % 784:
            print(f"{digit}.json: length {len(values)} not a multiple of 784", file=sys.stderr)
            return 2
        images = [values[i:i + 784] for i in range(0, len(values), 784)]
        per_class.append(images)

    # Interleave classes so any prefix of the file is roughly balanced.
    images, labels = [], []
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for digit, cls in enumerate(per_class):
            if i < len(cls):
                images.append(cls[i])
                labels.append(digit)

    with open(os.path.join(out, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            fh.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(os.path.join(out, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))
    print(f"wrote {len(images)} digits to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
