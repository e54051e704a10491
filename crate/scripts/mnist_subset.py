#!/usr/bin/env python3
"""Write the 5000-image MNIST subset shipped with mlxtend as IDX files.

The subset holds 500 images of each digit (CSV rows: 784 pixel values in
0..255 followed by the label). By default the mlxtend wheel is fetched with
`pip download`; pass --wheel to reuse one already on disk.

    python3 scripts/mnist_subset.py --out data/mnist-5k
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "mlxtend", "-d", str(dest)],
        check=True,
    )
    return next(dest.glob("mlxtend-*.whl"))


def read_rows(wheel: pathlib.Path):
    with zipfile.ZipFile(wheel) as zf:
        text = gzip.decompress(zf.read(MEMBER)).decode("ascii")
    for line in io.StringIO(text):
        line = line.strip()
        if line:
            values = [int(float(v)) for v in line.split(",")]
            yield values[:-1], values[-1]


def write_idx(out: pathlib.Path, rows) -> None:
    pixels = bytearray()
    labels = bytearray()
    for image, label in rows:
        if len(image) != 784 or not all(0 <= v <= 255 for v in image):
            raise ValueError("unexpected row layout")
        pixels.extend(image)
        labels.append(label)
    n = len(labels)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    (out / "labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} images to {out}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist-5k"))
    ap.add_argument("--wheel", type=pathlib.Path)
    args = ap.parse_args()
    if args.wheel:
        write_idx(args.out, read_rows(args.wheel))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            write_idx(args.out, read_rows(fetch_wheel(pathlib.Path(tmp))))


if __name__ == "__main__":
    main()
