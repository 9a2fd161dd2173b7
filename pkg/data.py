"""
Dataset construction: IDX ingestion, two-class subsets, unit-norm rows and
synthetic generators.

IDX layout (big-endian): two zero bytes, a type code (0x08 = unsigned byte),
the number of dimensions, one 32-bit unsigned size per dimension, then the
row-major payload. Paths ending in ``.gz`` are read and written through gzip.
"""

from __future__ import annotations

import gzip
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

try:  # pragma: no cover - support both package and script execution
    from .core.artifacts import atomic_write_bytes
    from .core.errors import (
        BadMagic,
        ContractViolation,
        IdxFormatError,
        InsufficientClassSamples,
        TruncatedFile,
        UnsupportedTypeCode,
        ZeroRow,
    )
    from .core.models import Dataset, RawImages, as_matrix
except ImportError:  # pragma: no cover - script mode fallback
    from core.artifacts import atomic_write_bytes  # type: ignore
    from core.errors import (  # type: ignore
        BadMagic,
        ContractViolation,
        IdxFormatError,
        InsufficientClassSamples,
        TruncatedFile,
        UnsupportedTypeCode,
        ZeroRow,
    )
    from core.models import Dataset, RawImages, as_matrix  # type: ignore

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_UBYTE = 0x08
IDX_MIN_BYTES = 8
LABEL_MODES = ("signs", "teacher", "planted")


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path: PathLike) -> np.ndarray:
    """Parse one IDX file of unsigned bytes into an array of its declared shape."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < IDX_MIN_BYTES:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is shorter than an IDX header")
    if raw[0] != 0 or raw[1] != 0:
        raise BadMagic(f"{path}: magic starts with {raw[0]:#04x} {raw[1]:#04x}, expected 0x00 0x00")
    type_code, ndim = raw[2], raw[3]
    if type_code != IDX_UBYTE:
        raise UnsupportedTypeCode(f"{path}: type code {type_code:#04x}; only unsigned byte (0x08) is supported")
    if ndim == 0:
        raise BadMagic(f"{path}: IDX header declares zero dimensions")

    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFile(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_len
    if payload < expected:
        raise TruncatedFile(f"{path}: payload has {payload} bytes, dimensions {dims} need {expected}")
    if payload > expected:
        LOGGER.warning("%s: ignoring %s trailing bytes", path, payload - expected)
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_len).reshape(dims).copy()


def write_idx(path: PathLike, array: np.ndarray) -> Path:
    """Write an unsigned-byte IDX file (gzip when the name ends in .gz)."""
    path = Path(path)
    values = np.asarray(array)
    if values.ndim == 0 or values.ndim > 255:
        raise ContractViolation(f"IDX arrays need 1..255 dimensions, got {values.ndim}")
    if values.dtype != np.uint8:
        if np.any(values < 0) or np.any(values > 255) or np.any(values != np.round(values)):
            raise ContractViolation("IDX payload must be integers in [0, 255]")
        values = values.astype(np.uint8)
    header = bytes([0, 0, IDX_UBYTE, values.ndim]) + struct.pack(">" + "I" * values.ndim, *values.shape)
    blob = header + np.ascontiguousarray(values).tobytes()
    if path.suffix == ".gz":
        # mtime=0 keeps the archive bytes reproducible
        blob = gzip.compress(blob, mtime=0)
    atomic_write_bytes(path, blob)
    return path


def load_idx(images_path: PathLike, labels_path: PathLike) -> RawImages:
    """Read a 3-D image file and its 1-D label file."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected a 3-D image file, got {images.ndim} dimensions")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a 1-D label file, got {labels.ndim} dimensions")
    LOGGER.debug("Loaded %s images of %sx%s", *images.shape)
    return RawImages(images=images, labels=labels)


def _class_indices(raw: RawImages, label: int, needed: int, rng: np.random.Generator) -> np.ndarray:
    available = np.flatnonzero(raw.labels == label)
    if available.size < needed:
        raise InsufficientClassSamples(f"class {label} has {available.size} samples, {needed} requested")
    return rng.choice(available, size=needed, replace=False)


def _to_dataset(raw: RawImages, first: np.ndarray, second: np.ndarray, rng: np.random.Generator) -> Dataset:
    chosen = np.concatenate([first, second])
    X = raw.images[chosen].reshape(chosen.size, -1).astype(np.float64) / 255.0
    y = np.concatenate([np.zeros(first.size), np.ones(second.size)])
    order = rng.permutation(chosen.size)
    return Dataset(X=X[order], y=y[order]).validate()


def make_binary_subset(raw: RawImages, classes: Tuple[int, int], n_per_class: int, seed: int = 0) -> Dataset:
    """n_per_class samples of each class, targets 0.0 / 1.0, rows shuffled."""
    if n_per_class < 1:
        raise ContractViolation(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    first = _class_indices(raw, classes[0], n_per_class, rng)
    second = _class_indices(raw, classes[1], n_per_class, rng)
    return _to_dataset(raw, first, second, rng)


def make_binary_split(
    raw: RawImages,
    classes: Tuple[int, int],
    n_train: int,
    n_test: int,
    seed: int = 0,
) -> Tuple[Dataset, Dataset]:
    """Disjoint train and held-out subsets drawn from the same file."""
    if n_train < 1 or n_test < 1:
        raise ContractViolation(f"n_train and n_test must be >= 1, got {n_train}, {n_test}")
    rng = np.random.default_rng(seed)
    first = _class_indices(raw, classes[0], n_train + n_test, rng)
    second = _class_indices(raw, classes[1], n_train + n_test, rng)
    train = _to_dataset(raw, first[:n_train], second[:n_train], rng)
    test = _to_dataset(raw, first[n_train:], second[n_train:], rng)
    return train, test


def normalize_rows(X: np.ndarray) -> np.ndarray:
    X = as_matrix(X, "X")
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroRow(f"row {int(zero[0])} is all zeros and cannot be normalized")
    return X / norms[:, None]


def synthetic(N: int, d: int, seed: int = 0, label_mode: str = "signs") -> Dataset:
    """
    Unit-norm Gaussian rows with alternating +-1 labels (``signs``) or the
    sign of a fixed random linear teacher (``teacher``, also accepted as
    ``planted``).
    """
    if N < 1 or d < 1:
        raise ContractViolation(f"N and d must be >= 1, got N={N}, d={d}")
    if label_mode not in LABEL_MODES:
        raise ContractViolation(f"label_mode must be one of {LABEL_MODES}, got {label_mode!r}")
    rng = np.random.default_rng(seed)
    X = normalize_rows(rng.standard_normal((N, d)))
    if label_mode == "signs":
        y = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)
    else:
        direction = rng.standard_normal(d)
        y = np.sign(X @ direction)
        y[y == 0.0] = 1.0
    return Dataset(X=X, y=y).validate()
