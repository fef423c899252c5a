#!/usr/bin/env python
"""Fetch the public datasets the desk-scale experiments use.

Downloads Fashion-MNIST (IDX files) and the CIFAR-10 binary batches into a
data directory and validates their structure: IDX magics, record counts, and
CIFAR record sizes. The library itself never downloads anything; point
DSTFORGE_DATA (or configs) at the directory this script fills.

Needs network access. Without it, obtain the same files by any other means
and drop them into data/fashion-mnist/ and data/cifar-10/.
"""

import argparse
import gzip
import os
import shutil
import struct
import sys
import tarfile
import urllib.request

FASHION_BASE = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"
FASHION_FILES = {
    "train-images-idx3-ubyte": 60000,
    "train-labels-idx1-ubyte": 60000,
    "t10k-images-idx3-ubyte": 10000,
    "t10k-labels-idx1-ubyte": 10000,
}
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR_MEMBERS = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
CIFAR_RECORD = 3073


def download(url: str, path: str):
    print(f"fetching {url}")
    with urllib.request.urlopen(url) as resp, open(path, "wb") as out:
        shutil.copyfileobj(resp, out)


def gunzip(src: str, dst: str):
    with gzip.open(src, "rb") as fh, open(dst, "wb") as out:
        shutil.copyfileobj(fh, out)
    os.remove(src)


def check_idx(path: str, expected_n: int):
    with open(path, "rb") as fh:
        head = fh.read(16)
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
    magic, n = struct.unpack(">II", head[:8])
    if magic == 0x803:
        _, _, h, w = struct.unpack(">IIII", head)
        want = 16 + n * h * w
    elif magic == 0x801:
        want = 8 + n
    else:
        raise SystemExit(f"{path}: unrecognized IDX magic 0x{magic:08x}")
    if n != expected_n:
        raise SystemExit(f"{path}: {n} records, expected {expected_n}")
    if size != want:
        raise SystemExit(f"{path}: {size} bytes, expected {want}")
    print(f"ok {path} ({n} records)")


def check_cifar(path: str, expected_n: int = 10000):
    size = os.path.getsize(path)
    if size != expected_n * CIFAR_RECORD:
        raise SystemExit(f"{path}: {size} bytes, expected {expected_n * CIFAR_RECORD}")
    print(f"ok {path} ({expected_n} records)")


def fetch_fashion(root: str):
    out = os.path.join(root, "fashion-mnist")
    os.makedirs(out, exist_ok=True)
    for name, n in FASHION_FILES.items():
        dst = os.path.join(out, name)
        if not os.path.exists(dst):
            download(FASHION_BASE + name + ".gz", dst + ".gz")
            gunzip(dst + ".gz", dst)
        check_idx(dst, n)


def fetch_cifar(root: str):
    out = os.path.join(root, "cifar-10")
    os.makedirs(out, exist_ok=True)
    if not all(os.path.exists(os.path.join(out, m)) for m in CIFAR_MEMBERS):
        tar_path = os.path.join(out, "cifar-10-binary.tar.gz")
        download(CIFAR_URL, tar_path)
        with tarfile.open(tar_path) as tar:
            for member in tar.getmembers():
                base = os.path.basename(member.name)
                if base in CIFAR_MEMBERS:
                    with tar.extractfile(member) as src, \
                            open(os.path.join(out, base), "wb") as dst:
                        shutil.copyfileobj(src, dst)
        os.remove(tar_path)
    for m in CIFAR_MEMBERS:
        check_cifar(os.path.join(out, m))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data", help="destination directory")
    ap.add_argument("--skip-cifar", action="store_true")
    ap.add_argument("--skip-fashion", action="store_true")
    args = ap.parse_args()
    if not args.skip_fashion:
        fetch_fashion(args.out)
    if not args.skip_cifar:
        fetch_cifar(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
