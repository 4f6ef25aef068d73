#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset shipped inside the mlxtend wheel to IDX files.

The subset is stored sorted by label; it is shuffled with a fixed seed and split
into a 4000-image training file pair and a 1000-image test file pair using the
standard MNIST file names.

usage: mnist_subset_to_idx.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>
"""
import gzip
import io
import os
import struct
import sys
import zipfile

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def load(path):
    if path.endswith(".whl"):
        raw = zipfile.ZipFile(path).read(MEMBER)
    else:
        with open(path, "rb") as f:
            raw = f.read()
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    return table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)


def write_idx(path, array):
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, 0x08, array.ndim))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    images, labels = load(sys.argv[1])
    order = np.random.RandomState(20200101).permutation(len(labels))
    images = images[order].reshape(-1, 28, 28)
    labels = labels[order]
    out = sys.argv[2]
    os.makedirs(out, exist_ok=True)
    write_idx(os.path.join(out, "train-images-idx3-ubyte"), images[:4000])
    write_idx(os.path.join(out, "train-labels-idx1-ubyte"), labels[:4000])
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte"), images[4000:])
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[4000:])


if __name__ == "__main__":
    main()
