"""Build an IDX image/label pair from the ``mnist`` npm package's digit JSON files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
digits as ``src/digits/<d>.json`` with pixels stored as byte/255 rounded to
three decimals; rounding ``value * 255`` recovers the original bytes exactly.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/mnist_from_npm.py package/src/digits data/mnist

Samples are written in a fixed interleaved order (seeded shuffle) so the
first N of the file is class-balanced.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from ddse.data import LabeledDataset, write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    feats, labels = [], []
    for d in range(10):
        raw = np.asarray(json.loads((args.digits_dir / f"{d}.json").read_text())["data"])
        imgs = raw.reshape(-1, 784)
        feats.append(np.rint(imgs * 255.0) / 255.0)
        labels.append(np.full(imgs.shape[0], d))
    x = np.concatenate(feats).T
    y = np.concatenate(labels)
    order = np.random.Generator(np.random.PCG64(args.seed)).permutation(y.size)
    data = LabeledDataset(x[:, order], y[order], 10)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(data, args.out_dir / "train-images-idx3-ubyte", args.out_dir / "train-labels-idx1-ubyte")
    print(f"wrote {data.size} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
