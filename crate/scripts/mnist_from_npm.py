#!/usr/bin/env python3
"""Build gzipped IDX files from the 10,000 MNIST digits bundled in the `mnist` npm package.

Usage: python3 scripts/mnist_from_npm.py [out_dir]

Requires `npm` on PATH. Pixels are stored as floats with three decimals in the
package; they are mapped back to bytes with round(v * 255). Samples are shuffled
with a fixed seed so that contiguous train/validation/test splits are class-balanced.
"""
import gzip
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "mnist")
os.makedirs(out_dir, exist_ok=True)

with tempfile.TemporaryDirectory() as tmp:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, capture_output=True)
    with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
        tar.extractall(tmp)
    samples = []
    for digit in range(10):
        with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(len(flat) // 784):
            px = bytes(max(0, min(255, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
            samples.append((px, digit))

random.Random(20201).shuffle(samples)
n = len(samples)
with gzip.GzipFile(os.path.join(out_dir, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
    for px, _ in samples:
        f.write(px)
with gzip.GzipFile(os.path.join(out_dir, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
    f.write(struct.pack(">II", 0x00000801, n))
    f.write(bytes(label for _, label in samples))
print(f"wrote {n} samples to {out_dir}")
