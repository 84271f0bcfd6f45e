"""Datasets and client partitioning.

Three sources are supported: a synthetic Gaussian-blob generator (default
corpus, no downloads), the IDX binary format used by the classic digit
datasets, and dense numeric CSV. Partitioning is either uniform or
label-skewed with non-IID degree q.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .model import Batch
from .vectors import RngStream, check_finite


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # N x d float64
    labels: np.ndarray  # N int64 in [0, num_classes)
    num_classes: int
    label_map: dict | None = None  # original label -> dense index, CSV only

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature rows != label count")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    def batch(self, idx=None) -> Batch:
        if idx is None:
            return Batch(self.features, self.labels)
        return Batch(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint, covering index lists: shards[c] are client c's example indices."""

    shards: tuple[np.ndarray, ...]

    @property
    def n_clients(self) -> int:
        return len(self.shards)


def gen_synthetic(
    n_classes: int, dim: int, per_class: int, spread: float, stream: RngStream
) -> tuple[Dataset, Dataset]:
    """Gaussian blobs with unit-sphere class means; deterministic 80/20 split."""
    if n_classes < 2 or dim < 1 or per_class < 2:
        raise ValueError("need n_classes >= 2, dim >= 1, per_class >= 2")
    means = stream.standard_normal((n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    n_train = int(round(0.8 * per_class))
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for c in range(n_classes):
        pts = means[c] + spread * stream.standard_normal((per_class, dim))
        tr_x.append(pts[:n_train])
        te_x.append(pts[n_train:])
        tr_y.append(np.full(n_train, c, dtype=np.int64))
        te_y.append(np.full(per_class - n_train, c, dtype=np.int64))
    train = Dataset(np.concatenate(tr_x), np.concatenate(tr_y), n_classes)
    test = Dataset(np.concatenate(te_x), np.concatenate(te_y), n_classes)
    return train, test


# --- IDX binary format ---------------------------------------------------


class IdxFormatError(ValueError):
    """Malformed IDX payload; the message states which check failed."""


_IDX_UBYTE = 0x08


def parse_idx(data: bytes) -> np.ndarray:
    """Parse an IDX byte string into a uint8 tensor with its dimension list.

    Layout: two zero bytes, a type code (only 0x08 unsigned byte accepted),
    a dimension count D, D big-endian u32 sizes, then the row-major payload.
    """
    if len(data) < 4:
        raise IdxFormatError("truncated header: fewer than 4 bytes")
    if data[0] != 0 or data[1] != 0:
        raise IdxFormatError(f"bad magic: first two bytes {data[0]:#04x} {data[1]:#04x}, expected zeros")
    if data[2] != _IDX_UBYTE:
        raise IdxFormatError(f"unsupported element type code {data[2]:#04x}, only 0x08 (unsigned byte) accepted")
    ndim = data[3]
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise IdxFormatError("truncated header: dimension sizes missing")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    count = 1
    for d in dims:
        count *= d
    if count > 2**40:
        raise IdxFormatError(f"dimension product {count} implausibly large")
    if len(data) - header_len != count:
        raise IdxFormatError(
            f"payload length {len(data) - header_len} does not match dimension product {count}"
        )
    arr = np.frombuffer(data, dtype=np.uint8, offset=header_len)
    return arr.reshape(dims) if ndim else arr


def serialize_idx(tensor: np.ndarray) -> bytes:
    """Inverse of parse_idx for uint8 tensors."""
    if tensor.dtype != np.uint8:
        raise ValueError("only uint8 tensors serialize to IDX")
    header = struct.pack(f">BBBB{tensor.ndim}I", 0, 0, _IDX_UBYTE, tensor.ndim, *tensor.shape)
    return header + tensor.tobytes()


def idx_to_dataset(images: bytes, labels: bytes) -> Dataset:
    """Pair an IDX image file with an IDX label file; pixels scaled to [0, 1]."""
    x = parse_idx(images)
    y = parse_idx(labels)
    if y.ndim != 1:
        raise IdxFormatError("label tensor must be 1-D")
    if x.shape[0] != y.shape[0]:
        raise IdxFormatError("image and label counts differ")
    feats = x.reshape(x.shape[0], -1).astype(np.float64) / 255.0
    lab = y.astype(np.int64)
    return Dataset(feats, lab, int(lab.max()) + 1)


# --- Dense CSV -----------------------------------------------------------


def load_dense_csv(path, label_column: int) -> Dataset:
    """Rectangular numeric CSV; labels remapped to dense 0..C-1 by sorted value.

    A header row is skipped automatically when the first row contains any
    non-numeric cell.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"non-numeric cell at row {lineno}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ValueError(f"ragged row at row {lineno}")
    if not rows:
        raise ValueError("no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    check_finite(mat, "csv contents")
    if not 0 <= label_column < mat.shape[1]:
        raise ValueError(f"label column {label_column} out of range")
    raw_labels = mat[:, label_column]
    feats = np.delete(mat, label_column, axis=1)
    uniq = np.unique(raw_labels)
    label_map = {float(v): i for i, v in enumerate(uniq)}
    labels = np.searchsorted(uniq, raw_labels).astype(np.int64)
    return Dataset(feats, labels, len(uniq), label_map=label_map)


# --- Partitioning --------------------------------------------------------


def _group_of_client(n_clients: int, n_groups: int):
    """Contiguous client-id ranges per group; remainder clients join the last."""
    base = n_clients // n_groups
    starts = [g * base for g in range(n_groups)]
    sizes = [base] * n_groups
    sizes[-1] += n_clients - base * n_groups
    return starts, sizes


def partition_noniid(
    train: Dataset, n_clients: int, q: float, stream: RngStream
) -> PartitionPlan:
    """Label-skew partition: an example of class l goes to client group l with
    probability q, and to each other group with probability (1-q)/(C-1);
    within a group the client is uniform."""
    if n_clients == 0:
        raise ValueError("n_clients must be >= 1")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    c = train.num_classes
    if n_clients < c:
        raise ValueError(f"need n_clients >= num_classes ({c}) for the label-skew scheme")
    starts, sizes = _group_of_client(n_clients, c)
    n = len(train)
    u = stream.random(n)
    own = u < q
    # For the (1-q) mass, pick uniformly among the other C-1 groups.
    other = stream.integers(0, c - 1, size=n)
    groups = np.where(own, train.labels, np.where(other >= train.labels, other + 1, other))
    within = stream.random(n)
    assigned = np.empty(n, dtype=np.int64)
    for g in range(c):
        mask = groups == g
        assigned[mask] = starts[g] + (within[mask] * sizes[g]).astype(np.int64)
    shards = tuple(np.flatnonzero(assigned == cid) for cid in range(n_clients))
    return PartitionPlan(shards)


def partition_uniform(train: Dataset, n_clients: int, stream: RngStream) -> PartitionPlan:
    """Random permutation split into near-equal shards (sizes differ by <= 1)."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    perm = stream.permutation(len(train))
    shards = tuple(np.sort(s) for s in np.array_split(perm, n_clients))
    return PartitionPlan(shards)
