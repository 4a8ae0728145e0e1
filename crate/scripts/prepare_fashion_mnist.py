#!/usr/bin/env python3
"""Build the desk-scale Fashion-MNIST subset used by the trend experiments.

Reads the per-class JSON files shipped in the `fashion-mnist` npm package
(`npm pack fashion-mnist`, then unpack) and writes gzipped IDX files:

    train-images-idx3-ubyte.gz / train-labels-idx1-ubyte.gz   1000 per class
    test-images-idx3-ubyte.gz  / test-labels-idx1-ubyte.gz     500 per class

Usage: prepare_fashion_mnist.py <package/src/clothes> <out dir>
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 1000
TEST_PER_CLASS = 500


def write_idx(out: Path, stem: str, images, labels):
    with gzip.GzipFile(out / f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(out / f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        # the class-0 file carries two empty placeholder rows
        rows = [r for r in rows if len(r) == 784]
        train += [(r, label) for r in rows[:TRAIN_PER_CLASS]]
        test += [(r, label) for r in rows[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20210413)
    rng.shuffle(train)
    rng.shuffle(test)
    for stem, rows in (("train", train), ("test", test)):
        write_idx(out, stem, [r for r, _ in rows], [l for _, l in rows])
        print(stem, len(rows))


if __name__ == "__main__":
    main()
