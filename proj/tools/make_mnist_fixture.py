#!/usr/bin/env python3
"""Build the desk-scale MNIST IDX fixture shipped in data/mnist-desk.tar.gz.

Source: the `mnist` npm package (v1.1.0), which bundles 10,000 MNIST digits as
JSON arrays of pixel/255 rounded to three decimals. Rounding back to bytes is
exact (max error 0.13 < 0.5). Digits are shuffled with a fixed seed and split
8000/2000 into train/test IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_fixture.py package/src/digits data/mnist-desk.tar.gz
"""
import io
import json
import random
import struct
import sys
import tarfile
from pathlib import Path


def idx_images(images):
    head = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return head + b"".join(bytes(img) for img in images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def main(src, dst):
    samples = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        for i in range(len(data) // 784):
            px = [int(round(v * 255)) for v in data[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(20200213).shuffle(samples)
    train, test = samples[:8000], samples[8000:]
    files = {
        "train-images-idx3-ubyte": idx_images([s[0] for s in train]),
        "train-labels-idx1-ubyte": idx_labels([s[1] for s in train]),
        "t10k-images-idx3-ubyte": idx_images([s[0] for s in test]),
        "t10k-labels-idx1-ubyte": idx_labels([s[1] for s in test]),
    }
    with tarfile.open(dst, "w:gz") as tar:
        for name, payload in files.items():
            info = tarfile.TarInfo(f"mnist-desk/{name}")
            info.size = len(payload)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(payload))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
