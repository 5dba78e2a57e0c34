"""Convert the 5000-image MNIST sample shipped with mlxtend to gzipped IDX files.

Rows are label-sorted in the source, so they are shuffled with a fixed seed
before the first 4000 become the training split and the rest the test split.

usage: python scripts/mnist_csv_to_idx.py mnist_5k.csv.gz data/mnist
"""

import argparse
import gzip
import struct
from pathlib import Path

import numpy as np


def write_idx(path, magic, array):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("out")
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    raw = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    images, labels = raw[:, :-1], raw[:, -1]
    assert images.shape[1] == 784 and images.min() >= 0 and images.max() <= 255
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images = images[order].reshape(-1, 28, 28)
    labels = labels[order]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.train
    for prefix, sl in (("train", slice(0, n)), ("t10k", slice(n, None))):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, images[sl])
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, labels[sl])
        print(prefix, images[sl].shape[0], "images, class counts", np.bincount(labels[sl], minlength=10).tolist())


if __name__ == "__main__":
    main()
