#!/usr/bin/env python3
"""Rebuild the files under data/ from packages on the Python/Rust package mirrors.

California Housing comes from the parquet copy bundled in pytorch-widedeep,
the 5000-digit MNIST subset from mlxtend (written out as IDX files), and the
red Wine Quality table from the linfa-datasets crate.
"""
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data")


def pip_download(pkg, dest):
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", pkg, "-d", dest],
        stdout=subprocess.DEVNULL,
    )
    return glob.glob(os.path.join(dest, pkg.replace("-", "_") + "-*.whl"))[0]


def california(tmp):
    import pandas as pd

    whl = zipfile.ZipFile(pip_download("pytorch-widedeep", tmp))
    path = os.path.join(tmp, "cal.parquet")
    with open(path, "wb") as f:
        f.write(whl.read("pytorch_widedeep/datasets/data/california_housing.parquet.brotli"))
    df = pd.read_parquet(path)
    df.to_csv(os.path.join(OUT, "california_housing.csv"), index=False, float_format="%.10g")


def mnist(tmp):
    whl = zipfile.ZipFile(pip_download("mlxtend", tmp))
    rows = gzip.decompress(whl.read("mlxtend/data/data/mnist_5k.csv.gz")).decode().splitlines()
    pixels, labels = [], []
    for row in rows:
        vals = [int(float(v)) for v in row.split(",")]
        pixels.append(bytes(vals[:784]))
        labels.append(vals[784])
    with gzip.open(os.path.join(OUT, "mnist5k-images-idx3-ubyte.gz"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(pixels), 28, 28))
        for p in pixels:
            f.write(p)
    with gzip.open(os.path.join(OUT, "mnist5k-labels-idx1-ubyte.gz"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def wine():
    cargo_home = os.environ.get("CARGO_HOME", os.path.expanduser("~/.cargo"))
    hits = glob.glob(os.path.join(cargo_home, "registry/src/*/linfa-datasets-*/data/winequality-red.csv.gz"))
    if not hits:
        print("linfa-datasets not in the cargo registry; add it to any project and run `cargo fetch`")
        return
    with gzip.open(hits[0], "rb") as src, open(os.path.join(OUT, "winequality-red.csv"), "wb") as dst:
        dst.write(src.read())


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        california(tmp)
        mnist(tmp)
    wine()
