#!/usr/bin/env python3
"""
Convert an .npz image archive (x_train, y_train, x_test, y_test) into the
four gzip IDX files the idx dataset kind reads. Colour images are reduced
to luminance and every image is resampled to 28x28.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

ROOT_DIR = Path(__file__).resolve().parent.parent
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

ARCHIVE_KEYS = {
    "x_train": "train-images-idx3-ubyte.gz",
    "y_train": "train-labels-idx1-ubyte.gz",
    "x_test": "t10k-images-idx3-ubyte.gz",
    "y_test": "t10k-labels-idx1-ubyte.gz",
}
SIDE = 28
LUMA = np.array([0.299, 0.587, 0.114])


def _expand(path: str | Path) -> Path:
    candidate = Path(path).expanduser()
    if not candidate.is_absolute():
        candidate = ROOT_DIR / candidate
    return candidate.resolve()


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Write grayscale 28x28 IDX files from an .npz image archive."
    )
    parser.add_argument("archive", help="Path to the .npz archive.")
    parser.add_argument(
        "--out-dir",
        default="data",
        help="Directory for the IDX files (default: data/ in the project root).",
    )
    parser.add_argument(
        "--channels-first",
        action="store_true",
        help="Images are stored as (n, channels, height, width).",
    )
    return parser.parse_args(argv)


def to_grayscale_28(images: np.ndarray, channels_first: bool = False) -> np.ndarray:
    values = np.asarray(images, dtype=np.float64)
    if values.ndim == 4:
        if channels_first:
            values = np.moveaxis(values, 1, -1)
        if values.shape[-1] not in (1, 3, 4):
            raise ValueError(f"expected 1, 3 or 4 channels, got shape {images.shape}")
        values = values[..., 0] if values.shape[-1] == 1 else values[..., :3] @ LUMA
    if values.ndim != 3:
        raise ValueError(f"expected a stack of images, got shape {images.shape}")
    if values.shape[1:] != (SIDE, SIDE):
        factors = (1.0, SIDE / values.shape[1], SIDE / values.shape[2])
        values = ndimage.zoom(values, factors, order=1)
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def convert(archive: Path, out_dir: Path, channels_first: bool = False) -> list[Path]:
    from data import write_idx

    written: list[Path] = []
    with np.load(archive, allow_pickle=False) as arrays:
        missing = [key for key in ARCHIVE_KEYS if key not in arrays.files]
        if missing:
            raise KeyError(f"{archive} lacks arrays {missing}")
        for key, name in ARCHIVE_KEYS.items():
            if key.startswith("x"):
                values = to_grayscale_28(arrays[key], channels_first)
            else:
                values = np.asarray(arrays[key]).reshape(-1)
            written.append(write_idx(out_dir / name, values))
    return written


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    archive = _expand(args.archive)
    if not archive.exists():
        print(f"Archive not found: {archive}")
        return 1

    try:
        written = convert(archive, _expand(args.out_dir), args.channels_first)
    except (KeyError, ValueError) as exc:
        print(f"Conversion failed: {exc}")
        return 2

    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
