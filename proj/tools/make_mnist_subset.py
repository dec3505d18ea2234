#!/usr/bin/env python3
"""Writes the 5,000-sample MNIST subset bundled with mlxtend as gzipped IDX files.

Usage: make_mnist_subset.py [--wheel PATH] [--out DIR]

Without --wheel the mlxtend wheel is fetched with `pip download`.
"""
import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(explicit):
    if explicit:
        return pathlib.Path(explicit)
    tmp = pathlib.Path(tempfile.mkdtemp())
    subprocess.run(["pip", "download", "mlxtend", "--no-deps", "-q", "-d", str(tmp)], check=True)
    return next(tmp.glob("mlxtend-*.whl"))


def read_rows(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    images, labels = [], []
    for line in io.StringIO(raw.decode("ascii")):
        fields = line.strip().split(",")
        if len(fields) != 785:
            continue
        values = [int(float(v)) for v in fields]
        images.append(bytes(values[:784]))
        labels.append(values[784])
    return images, labels


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/mnist5k")
    args = ap.parse_args()
    images, labels = read_rows(find_wheel(args.wheel))
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", 2051, [len(images), 28, 28], b"".join(images))
    write_idx(out / "train-labels-idx1-ubyte.gz", 2049, [len(labels)], bytes(labels))
    print(f"wrote {len(labels)} samples to {out}")


if __name__ == "__main__":
    main()
