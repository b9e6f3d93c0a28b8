"""Rebuild the bundled MNIST subset (2,000 train / 1,000 test IDX files).

Source: the 5,000-image MNIST sample (500 per digit, raw 0-255 pixels)
shipped as ``mlxtend/data/data/mnist_5k.csv.gz`` in the mlxtend wheel.
The rows are class-sorted, so they are shuffled with a fixed seed first.

    python scripts/make_mnist_subset.py path/to/mnist_5k.csv.gz
"""
import gzip
import sys
from pathlib import Path

import numpy as np

from initlab.data import write_idx_images, write_idx_labels

OUT = Path(__file__).resolve().parents[1] / "src" / "initlab" / "data"


def main(src):
    with gzip.open(src, "rt") as f:
        table = np.loadtxt(f, delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(20240601).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    for split, sl in (("train", slice(0, 2000)), ("test", slice(2000, 3000))):
        write_idx_images(OUT / f"mnist-{split}-images-idx3-ubyte.gz", pixels[sl])
        write_idx_labels(OUT / f"mnist-{split}-labels-idx1-ubyte.gz", labels[sl])


if __name__ == "__main__":
    main(sys.argv[1])
