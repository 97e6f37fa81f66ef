"""Dataset ingestion, synthetic task generation, and Poisson subsampling.

Supports big-endian IDX image/label pairs (pixel values scaled by 1/255),
a plain-text cache format that round-trips bit-exactly, and Gaussian-blob
classification tasks that are linearly separable when the margin dominates
the blob spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, IdxFormatError
from .models import Batch
from .vectors import RngStream

__all__ = [
    "Dataset",
    "gen_synthetic",
    "load_cache",
    "load_idx_pair",
    "poisson_sample",
    "save_cache",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    inputs: np.ndarray  # (n, d_in) float64
    labels: np.ndarray  # (n,) int64
    n_classes: int

    def __post_init__(self):
        if "," in self.name or "\n" in self.name:
            raise ContractViolation("dataset name must not contain commas or newlines")
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ContractViolation("dataset must contain at least one example")
        if labels.shape != (inputs.shape[0],):
            raise ContractViolation("inputs and labels must have equal length")
        if not np.all(np.isfinite(inputs)):
            raise ContractViolation("non-finite input coordinate")
        if self.n_classes < 2:
            raise ContractViolation(f"need at least 2 classes, got {self.n_classes}")
        if labels.min() < 0 or int(labels.max()) >= self.n_classes:
            raise ContractViolation(f"labels must lie in [0, {self.n_classes})")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]


def _be_u32(data: bytes, offset: int, path: str) -> int:
    if len(data) < offset + 4:
        raise IdxFormatError(f"{path}: truncated header, needed 4 bytes at byte {offset}")
    return int.from_bytes(data[offset : offset + 4], "big")


def load_idx_pair(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Parse a big-endian IDX image/label pair into a Dataset.

    Pixels are divided by 255; the class count is taken from the full label
    file before any truncation by ``limit``.
    """
    images_path = str(images_path)
    labels_path = str(labels_path)
    img = Path(images_path).read_bytes()
    magic = _be_u32(img, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x} at byte 0, expected images magic "
            f"0x{IDX_IMAGES_MAGIC:08x}"
        )
    count = _be_u32(img, 4, images_path)
    rows = _be_u32(img, 8, images_path)
    cols = _be_u32(img, 12, images_path)
    need = 16 + count * rows * cols
    if len(img) < need:
        raise IdxFormatError(
            f"{images_path}: pixel payload truncated at byte {len(img)}, expected {need} bytes "
            f"for {count} x {rows} x {cols} images"
        )

    lab = Path(labels_path).read_bytes()
    lmagic = _be_u32(lab, 0, labels_path)
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{lmagic:08x} at byte 0, expected labels magic "
            f"0x{IDX_LABELS_MAGIC:08x}"
        )
    lcount = _be_u32(lab, 4, labels_path)
    if lcount != count:
        raise IdxFormatError(
            f"label count {lcount} in {labels_path} does not match image count {count} "
            f"in {images_path}"
        )
    if len(lab) < 8 + lcount:
        raise IdxFormatError(
            f"{labels_path}: label payload truncated at byte {len(lab)}, expected {8 + lcount} bytes"
        )

    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=lcount, offset=8).astype(np.int64)
    n_classes = int(labels.max()) + 1 if labels.size else 0

    if limit is not None:
        if limit < 1:
            raise ContractViolation(f"limit must be >= 1, got {limit}")
        inputs = inputs[:limit]
        labels = labels[:limit]
    return Dataset(Path(images_path).stem.replace(",", "_"), inputs, labels, n_classes)


def gen_synthetic(
    n: int, d_in: int, n_classes: int, margin: float, seed: int, std: float = 1.0
) -> Dataset:
    """Gaussian class blobs with centers exactly ``margin`` apart.

    Centers sit at (margin/sqrt(2)) along distinct coordinate axes, so the
    pairwise center distance is exactly the margin; requires
    n_classes <= d_in. Linearly separable when margin >= 6 * std.
    """
    if n_classes < 2:
        raise ContractViolation(f"need at least 2 classes, got {n_classes}")
    if n < n_classes:
        raise ContractViolation(f"need n >= n_classes, got n={n}, n_classes={n_classes}")
    if d_in < n_classes:
        raise ContractViolation(
            f"axis-aligned centers need d_in >= n_classes, got d_in={d_in}, n_classes={n_classes}"
        )
    if not math.isfinite(margin) or margin <= 0:
        raise ContractViolation(f"margin must be positive, got {margin!r}")
    if not math.isfinite(std) or std <= 0:
        raise ContractViolation(f"std must be positive, got {std!r}")
    centers = np.zeros((n_classes, d_in))
    np.fill_diagonal(centers[:, :n_classes], margin / math.sqrt(2.0))
    labels = np.arange(n, dtype=np.int64) % n_classes
    gen = RngStream(seed, 0, "synthetic-data").generator()
    inputs = centers[labels] + std * gen.standard_normal((n, d_in))
    return Dataset(f"synthetic-n{n}-d{d_in}-c{n_classes}", inputs, labels, n_classes)


def poisson_sample(dataset: Dataset, q: float, stream: RngStream) -> Batch:
    """Include each example independently with probability q, in index order.

    The result may be empty; callers decide what an empty batch means.
    """
    if not 0.0 <= q <= 1.0:
        raise ContractViolation(f"sampling ratio must be in [0, 1], got {q!r}")
    draws = stream.generator().random(dataset.n)
    mask = draws < q
    return Batch(dataset.inputs[mask], dataset.labels[mask])


def save_cache(dataset: Dataset, path) -> None:
    """Write the plain-text cache: header `name,n,d_in,n_classes`, then one
    `label,x1,...,xd` row per example. Floats are written with repr so a
    reload is bit-identical."""
    lines = [f"{dataset.name},{dataset.n},{dataset.d_in},{dataset.n_classes}"]
    for i in range(dataset.n):
        row = ",".join(repr(float(v)) for v in dataset.inputs[i])
        lines.append(f"{int(dataset.labels[i])},{row}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cache(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.split("\n") if line]
    if not lines:
        raise ContractViolation(f"{path}: empty cache file")
    head = lines[0].split(",")
    if len(head) != 4:
        raise ContractViolation(f"{path}: malformed cache header {lines[0]!r}")
    name, n, d_in, n_classes = head[0], int(head[1]), int(head[2]), int(head[3])
    if len(lines) - 1 != n:
        raise ContractViolation(f"{path}: expected {n} rows, found {len(lines) - 1}")
    labels = np.empty(n, dtype=np.int64)
    inputs = np.empty((n, d_in))
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != d_in + 1:
            raise ContractViolation(f"{path}: row {i} has {len(parts) - 1} values, expected {d_in}")
        labels[i] = int(parts[0])
        inputs[i] = [float(v) for v in parts[1:]]
    return Dataset(name, inputs, labels, n_classes)
