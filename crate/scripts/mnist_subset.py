#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into
gzipped IDX files: 8,000 training and 2,000 test images.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for digit in range(10):
        records = json.loads((src / f"{digit}.json").read_text())["data"]
        # each digit file stores flattened 28x28 images back to back
        flat = np.asarray(records, dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(flat * 255.0).clip(0, 255))
        labels.append(np.full(len(flat), digit))
    images = np.concatenate(images).reshape(-1, 28, 28)
    labels = np.concatenate(labels)
    order = np.random.RandomState(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = 8000
    write_idx_images(dst / "train-images-idx3-ubyte.gz", images[:n_train])
    write_idx_labels(dst / "train-labels-idx1-ubyte.gz", labels[:n_train])
    write_idx_images(dst / "t10k-images-idx3-ubyte.gz", images[n_train:])
    write_idx_labels(dst / "t10k-labels-idx1-ubyte.gz", labels[n_train:])
    print(f"train={n_train} test={len(labels) - n_train}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
