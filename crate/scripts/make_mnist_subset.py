"""Build the MNIST subset fixture used by the smoke tests.

Source: the `mnist` npm package (MIT), which bundles 10,000 MNIST digits as
JSON arrays of pixel intensities in [0, 1] rounded to three decimals.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits crates/core/fixtures/mnist-subset

Writes gzip-compressed IDX files: 5,000 training images and 2,000 test
images, disjoint, selected with a fixed seed.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN, TEST, SEED = 5000, 2000, 20190101


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        raw = raw.reshape(-1, 784)
        images.append(np.clip(np.rint(raw * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(raw.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(SEED).permutation(len(labels))
    dst.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", order[:TRAIN]), ("t10k", order[TRAIN:TRAIN + TEST])):
        with gzip.GzipFile(dst / f"{name}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(idx), 28, 28))
            f.write(images[idx].tobytes())
        with gzip.GzipFile(dst / f"{name}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(idx)))
            f.write(labels[idx].tobytes())
        print(name, len(idx), np.bincount(labels[idx], minlength=10))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
