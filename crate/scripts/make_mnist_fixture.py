#!/usr/bin/env python3
"""Build the small MNIST IDX fixture used by the MNIST example and tests.

Reads the per-digit JSON files shipped with the `mnist` npm package
(pixels stored as v/255 rounded to three decimals), takes the first
PER_DIGIT images of every digit, interleaves them with a fixed
permutation and writes gzipped IDX files.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_fixture.py package/src/digits crates/core/testdata
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

PER_DIGIT = 420


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        count = len(data) // 784
        assert count >= PER_DIGIT, (digit, count)
        for i in range(PER_DIGIT):
            px = bytes(round(v * 255) for v in data[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(20190606).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    images = struct.pack(">IIII", 0x00000803, len(samples), 28, 28)
    images += b"".join(px for px, _ in samples)
    labels = struct.pack(">II", 0x00000801, len(samples))
    labels += bytes(d for _, d in samples)
    # mtime=0 keeps the archives byte-reproducible
    with gzip.GzipFile(dst / "mnist-subset-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(images)
    with gzip.GzipFile(dst / "mnist-subset-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(labels)


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
