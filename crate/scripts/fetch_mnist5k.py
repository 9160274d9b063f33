#!/usr/bin/env python3
"""Write the 5,000-image MNIST subset bundled with mlxtend as IDX files.

Usage: python3 scripts/fetch_mnist5k.py [out-dir]

Downloads the mlxtend wheel with pip (no install), reads
mlxtend/data/data/mnist_5k.csv.gz (784 pixel columns + label) and writes
train-images-idx3-ubyte / train-labels-idx1-ubyte into out-dir
(default: data/mnist5k).
"""
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist5k")
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "mlxtend==0.24.0", "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]
        raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = gzip.decompress(raw).decode().splitlines()
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        assert len(values) == 785
        pixels.extend(values[:784])
        labels.append(values[784])
    n = len(rows)
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(pixels)
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
