#!/usr/bin/env python3
"""Build a 10,000-digit MNIST subset in standard IDX format without a dataset download.

The npm package ``mnist`` bundles 10,000 genuine MNIST digits
(src/digits/<d>.json, pixels stored as byte/255 rounded to 3 decimals, which
round-trips exactly back to bytes).

Output (gzip, mtime 0 so the files are reproducible):
  t10k : the last 100 digits of each class, interleaved 0,1,...,9,0,1,...
         so every prefix is class-balanced
  train: the remaining 9,000 digits

Usage: tools/make_mnist_subset.py [--out data/mnist]
"""

import argparse
import gzip
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile


def fetch(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    return next(workdir.glob("mnist-*.tgz"))


def load_npm(tgz):
    images, labels = [], []
    with tarfile.open(tgz) as t:
        for digit in range(10):
            data = json.load(t.extractfile(f"package/src/digits/{digit}.json"))["data"]
            for i in range(0, len(data), 784):
                images.append(bytes(round(v * 255) for v in data[i:i + 784]))
                labels.append(digit)
    return images, labels


def write_idx(path: pathlib.Path, images, labels, stem):
    img = struct.pack(">IIII", 2051, len(images), 28, 28) + b"".join(images)
    lab = struct.pack(">II", 2049, len(labels)) + bytes(labels)
    for name, payload in ((f"{stem}-images-idx3-ubyte.gz", img),
                          (f"{stem}-labels-idx1-ubyte.gz", lab)):
        with open(path / name, "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="wb", mtime=0, filename="") as g:
                g.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        images, labels = load_npm(fetch(pathlib.Path(tmp)))
    by_class = {c: [i for i, y in enumerate(labels) if y == c] for c in range(10)}
    test_idx = [by_class[c][len(by_class[c]) - 100 + k] for k in range(100) for c in range(10)]
    held_out = set(test_idx)
    train_idx = [i for i in range(len(images)) if i not in held_out]
    write_idx(out, [images[i] for i in train_idx], [labels[i] for i in train_idx], "train")
    write_idx(out, [images[i] for i in test_idx], [labels[i] for i in test_idx], "t10k")
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test digits to {out}")


if __name__ == "__main__":
    main()
