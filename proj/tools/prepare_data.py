#!/usr/bin/env python3
"""Builds the bundled datasets under data/.

wine.csv      scikit-learn's copy of the UCI wine recognition data, with a
              header row and a `class` label column (values 1, 2, 3).
mnist/*       IDX files built from the 10k MNIST digits shipped in the npm
              `mnist` package (pixels stored there as round(v/255, 3), which
              maps back to the original bytes exactly). Digits are shuffled
              with a fixed seed and split 60/40 into a training pool and a
              held-out test set.

Usage: prepare_data.py [--npm-mnist DIR]   (DIR = extracted npm package)
"""
import argparse
import csv
import json
import os
import random
import struct

import sklearn
from sklearn.datasets import load_wine

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def write_wine():
    raw = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "data", "wine_data.csv")
    names = load_wine().feature_names
    with open(raw) as f, open(os.path.join(ROOT, "wine.csv"), "w", newline="") as out:
        rows = list(csv.reader(f))[1:]
        w = csv.writer(out, lineterminator="\n")
        w.writerow(names + ["class"])
        for r in rows:
            w.writerow(r[:-1] + [str(int(r[-1]) + 1)])


def write_idx(prefix, images, labels):
    n = len(labels)
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))


def write_mnist(pkg):
    items = []
    for d in range(10):
        data = json.load(open(os.path.join(pkg, "src", "digits", f"{d}.json")))["data"]
        for s in range(len(data) // 784):
            px = [int(round(v * 255)) for v in data[s * 784:(s + 1) * 784]]
            assert all(0 <= p <= 255 for p in px)
            items.append((px, d))
    random.Random(20200512).shuffle(items)
    n_train = len(items) * 6 // 10
    os.makedirs(os.path.join(ROOT, "mnist"), exist_ok=True)
    tr, te = items[:n_train], items[n_train:]
    write_idx(os.path.join(ROOT, "mnist", "train"), [i[0] for i in tr], [i[1] for i in tr])
    write_idx(os.path.join(ROOT, "mnist", "test"), [i[0] for i in te], [i[1] for i in te])
    print(f"mnist: {len(tr)} train, {len(te)} test")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--npm-mnist", default=None)
    a = ap.parse_args()
    os.makedirs(ROOT, exist_ok=True)
    write_wine()
    if a.npm_mnist:
        write_mnist(a.npm_mnist)
