#!/usr/bin/env python3
"""Download MNIST as IDX files.

Tries the usual MNIST mirrors first and writes the canonical 60k/10k files
to data/mnist. If none is reachable, falls back to the 10,000 digits shipped
in the `mnist` npm package and writes an 8,000/2,000 split to
data/mnist-subset instead (200 test images per class, the rest for training).
"""

import argparse
import gzip
import json
import random
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
]

TEST_PER_CLASS = 200


def fetch_canonical(out: Path, timeout: float) -> bool:
    for base in MIRRORS:
        try:
            out.mkdir(parents=True, exist_ok=True)
            for name in FILES:
                target = out / name
                if target.exists():
                    continue
                with urllib.request.urlopen(base + name + ".gz", timeout=timeout) as r:
                    target.write_bytes(gzip.decompress(r.read()))
            print(f"canonical MNIST written to {out} (from {base})")
            return True
        except Exception as e:  # noqa: BLE001 - any failure means try the next mirror
            print(f"  {base}: {e}", file=sys.stderr)
            for name in FILES:
                (out / name).unlink(missing_ok=True)
    if is_empty_dir(out):
        out.rmdir()
    return False


def is_empty_dir(path: Path) -> bool:
    return path.is_dir() and not any(path.iterdir())


def write_idx(out: Path, prefix: str, images, labels) -> None:
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def fetch_npm_subset(out: Path, seed: int) -> bool:
    if shutil.which("npm") is None:
        print("npm not found; cannot build the fallback subset", file=sys.stderr)
        return False
    with tempfile.TemporaryDirectory() as tmp:
        try:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                           stdout=subprocess.PIPE)
        except subprocess.CalledProcessError as e:
            print(f"npm pack failed: {e}", file=sys.stderr)
            return False
        tgz = next(Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        digits = Path(tmp) / "package" / "src" / "digits"
        train, test = [], []
        for cls in range(10):
            flat = json.loads((digits / f"{cls}.json").read_text())["data"]
            images = [flat[i:i + 784] for i in range(0, len(flat), 784)]
            test += [(img, cls) for img in images[:TEST_PER_CLASS]]
            train += [(img, cls) for img in images[TEST_PER_CLASS:]]
    rng = random.Random(seed)
    rng.shuffle(train)
    rng.shuffle(test)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", [x for x, _ in train], [y for _, y in train])
    write_idx(out, "t10k", [x for x, _ in test], [y for _, y in test])
    print(f"MNIST subset written to {out}: {len(train)} train, {len(test)} test")
    return True


def main() -> int:
    root = Path(__file__).resolve().parent.parent
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=root / "data" / "mnist")
    p.add_argument("--subset-out", type=Path, default=root / "data" / "mnist-subset")
    p.add_argument("--timeout", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--subset-only", action="store_true")
    args = p.parse_args()

    if not args.subset_only and fetch_canonical(args.out, args.timeout):
        return 0
    print("canonical MNIST unavailable, building the npm subset", file=sys.stderr)
    return 0 if fetch_npm_subset(args.subset_out, args.seed) else 1


if __name__ == "__main__":
    sys.exit(main())
