"""Dataset loaders: MNIST IDX, tabular CSV, synthetic binary task, byte corpus."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .numerics import ParameterError, RngState

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


class FormatError(ValueError):
    """Malformed input file; the message names the file and position."""


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.targets):
            raise ParameterError(f"inputs {self.inputs.shape} and targets {self.targets.shape} do not align")
        if not np.all(np.isfinite(self.inputs)):
            raise ParameterError("dataset features must be finite")

    def __len__(self):
        return len(self.targets)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.inputs[:n], self.targets[:n], self.split)


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int, item_dims: int) -> tuple[np.ndarray, tuple]:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    (got,) = struct.unpack_from(">i", raw, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got} at offset 0 (expected {magic})")
    header = 4 + 4 * (1 + item_dims)
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    dims = struct.unpack_from(f">{1 + item_dims}i", raw, 4)
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for dims {dims}, file ends at offset {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(dims), dims


def load_mnist_idx(images_path, labels_path, limit: int | None = None, split: str = "train") -> Dataset:
    """Parse IDX image/label files (optionally gzipped) into 784-feature rows in [0, 1]."""
    images, idims = _read_idx(images_path, IDX_IMAGE_MAGIC, 2)
    labels, ldims = _read_idx(labels_path, IDX_LABEL_MAGIC, 0)
    if idims[0] != ldims[0]:
        raise FormatError(f"{labels_path}: {ldims[0]} labels at offset 4 but {idims[0]} images in {images_path}")
    if limit is not None:
        if limit > idims[0]:
            raise ParameterError(f"requested {limit} images but only {idims[0]} are available")
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), split)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    blob = struct.pack(">iiii", IDX_IMAGE_MAGIC, *images.shape) + images.tobytes()
    _write(path, blob)


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def _write(path, blob: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(blob)
    else:
        path.write_bytes(blob)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("initlab") / "data" / name))


def bundled_mnist(split: str = "train") -> tuple[Path, Path]:
    return (bundled_path(f"mnist-{split}-images-idx3-ubyte.gz"),
            bundled_path(f"mnist-{split}-labels-idx1-ubyte.gz"))


# --------------------------------------------------------------------------
# tabular


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        if len(x) < 2:
            raise ParameterError("standardization needs at least 2 rows")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def read_csv_table(path, header: bool = True) -> tuple[list[str] | None, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    rows = [r for r in rows if r]
    names = None
    if header:
        if not rows:
            raise FormatError(f"{path}: missing header row")
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    width = len(names) if names else (len(rows[0]) if rows else 0)
    table = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + (2 if header else 1)
        if len(row) != width:
            raise FormatError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                table[i, j] = float(cell)
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell {cell!r} at row {line}, column {j + 1}") from None
    return names, table


def load_csv_dataset(path, target_column=-1, header: bool = True, standardizer: Standardizer | None = None,
                     positive_threshold: float | None = None, split: str = "train") -> tuple[Dataset, Standardizer]:
    """Load a numeric CSV as a binary-classification Dataset.

    Features are standardized with ``standardizer`` (pass the train split's
    to avoid leakage) or with statistics fitted on this file.  Targets with
    exactly two distinct values map to {0, 1} in sorted order; anything else
    needs ``positive_threshold`` (target > threshold -> 1).
    """
    names, table = read_csv_table(path, header)
    if isinstance(target_column, str):
        if names is None or target_column not in names:
            raise FormatError(f"{path}: no column named {target_column!r}")
        col = names.index(target_column)
    else:
        col = int(target_column) % table.shape[1] if table.shape[1] else 0
    y_raw = table[:, col]
    x = np.delete(table, col, axis=1)
    if positive_threshold is not None:
        y = (y_raw > positive_threshold).astype(np.int64)
    else:
        values = np.unique(y_raw)
        if len(values) > 2:
            raise FormatError(f"{path}: target column has {len(values)} distinct values; set positive_threshold")
        y = (y_raw == values[-1]).astype(np.int64) if len(values) == 2 else np.zeros(len(y_raw), np.int64)
    if standardizer is None:
        standardizer = Standardizer.fit(x)
    return Dataset(standardizer.apply(x), y, split), standardizer


def synth_binary(n: int, d: int = 11, separation: float = 3.0, rng: RngState | None = None,
                 split: str = "train") -> Dataset:
    """Two unit-variance Gaussian clusters centred at +-(separation/2) u, u a random unit vector."""
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    gen = (rng or RngState(0)).generator
    u = gen.standard_normal(d)
    u /= np.linalg.norm(u)
    y = gen.integers(0, 2, size=n)
    centers = np.where(y[:, None] == 1, 0.5 * separation, -0.5 * separation) * u
    x = centers + gen.standard_normal((n, d))
    return Dataset(x, y.astype(np.int64), split)


# --------------------------------------------------------------------------
# byte-level text


def tokenize(text) -> np.ndarray:
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def detokenize(ids) -> bytes:
    return np.asarray(ids, dtype=np.uint8).tobytes()


@dataclass
class Corpus:
    tokens: np.ndarray
    boundary: int

    @property
    def train(self) -> np.ndarray:
        return self.tokens[:self.boundary]

    @property
    def test(self) -> np.ndarray:
        return self.tokens[self.boundary:]


def load_corpus(path, split: float = 0.9, min_side: int = 2) -> Corpus:
    """Byte-level corpus with a contiguous train/test split at ``floor(split * n)``.

    Both sides must hold at least ``min_side`` tokens (use ctx_len + 1 for LM training).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such corpus file: {path}")
    tokens = tokenize(path.read_bytes())
    if not 0.0 < split < 1.0:
        raise ParameterError(f"split must lie in (0, 1), got {split}")
    boundary = int(split * len(tokens))
    if boundary < min_side or len(tokens) - boundary < min_side:
        raise OSError(f"{path}: {len(tokens)} bytes is too small for a split with {min_side} tokens per side")
    return Corpus(tokens, boundary)
