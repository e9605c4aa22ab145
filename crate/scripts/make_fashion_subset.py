#!/usr/bin/env python3
"""Build the desk-scale Fashion-MNIST IDX fixture used by the acceptance suite.

Input is the per-class JSON dump shipped by the `fashion-mnist` npm package
(`npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz`). Each class file
holds 784-byte images (plus the odd empty separator row, which is dropped);
the first 1000 rows of a class come from the original test split and the
remaining 6000 from the training split.

Usage: make_fashion_subset.py <package/src/clothes> <out_dir> [n_train_per_class] [n_test_per_class]
"""
import json
import random
import struct
import sys
from pathlib import Path

TEST_ROWS = 1000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    n_train = int(sys.argv[3]) if len(sys.argv) > 3 else 100
    n_test = int(sys.argv[4]) if len(sys.argv) > 4 else 50
    train, test = [], []
    for label in range(10):
        rows = [r for r in json.load(open(src / f"{label}.json"))["data"] if r]
        assert all(len(r) == 784 for r in rows)
        test += [(r, label) for r in rows[:n_test]]
        train += [(r, label) for r in rows[TEST_ROWS:TEST_ROWS + n_train]]
    rng = random.Random(20240601)
    rng.shuffle(train)
    rng.shuffle(test)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", [r for r, _ in train])
    write_labels(out / "train-labels-idx1-ubyte", [l for _, l in train])
    write_images(out / "t10k-images-idx3-ubyte", [r for r, _ in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [l for _, l in test])


if __name__ == "__main__":
    main()
