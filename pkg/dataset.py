from __future__ import annotations

import gzip
import math
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import EmptyShardError, IdxFormatError, PartitionError
from logger import get_logger
from models import PartitionPlan
from rng import Xorshift64Star


_LOG = get_logger()

BLOB_RADIUS = 3.0
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class DatasetShard:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels")
        if self.features.shape[0] == 0:
            raise EmptyShardError("shard has no rows")

    @property
    def rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def take(self, indices: Iterable[int]) -> "DatasetShard":
        idx = np.asarray(list(indices), dtype=np.int64)
        return DatasetShard(features=self.features[idx], labels=self.labels[idx])


def gen_blobs(num_classes: int, dim: int, per_class: int, sigma: float, seed: int) -> DatasetShard:
    """Gaussian blobs around class means drawn on a sphere of radius 3.

    Rows are class-major: all samples of class 0, then class 1, and so on.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if dim < 1 or per_class < 1:
        raise ValueError("dim and per_class must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = Xorshift64Star(seed)
    means = np.empty((num_classes, dim), dtype=np.float64)
    for c in range(num_classes):
        direction = rng.gauss_array(dim)
        norm = float(np.linalg.norm(direction))
        while norm == 0.0:
            direction = rng.gauss_array(dim)
            norm = float(np.linalg.norm(direction))
        means[c] = BLOB_RADIUS * direction / norm

    features = np.empty((num_classes * per_class, dim), dtype=np.float64)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    for row in range(features.shape[0]):
        features[row] = means[labels[row]] + rng.gauss_array(dim, 0.0, sigma)
    return DatasetShard(features=features, labels=labels)


def default_partition(num_clients: int, num_classes: int) -> PartitionPlan:
    """Contiguous label blocks: client 1 gets the first block, the last client any remainder."""
    if num_clients < 1 or num_classes < num_clients:
        raise PartitionError(f"cannot split {num_classes} labels across {num_clients} clients")
    per = num_classes // num_clients
    assignments: dict[int, tuple[int, ...]] = {}
    for k in range(1, num_clients + 1):
        stop = k * per if k < num_clients else num_classes
        assignments[k] = tuple(range((k - 1) * per, stop))
    return PartitionPlan(assignments=assignments)


def partition_by_label(
    shard: DatasetShard,
    plan: PartitionPlan | Mapping[int, Iterable[int]],
) -> dict[int, DatasetShard]:
    assignments = plan.assignments if isinstance(plan, PartitionPlan) else plan
    label_sets = {int(cid): [int(x) for x in labels] for cid, labels in assignments.items()}

    owner: dict[int, int] = {}
    for cid in sorted(label_sets):
        for label in label_sets[cid]:
            if label in owner and owner[label] != cid:
                raise PartitionError(f"overlapping label sets: label {label} in clients {owner[label]} and {cid}")
            owner[label] = cid

    present = sorted(int(x) for x in np.unique(shard.labels))
    uncovered = [x for x in present if x not in owner]
    if uncovered:
        raise PartitionError(f"uncovered labels: {uncovered}")

    out: dict[int, DatasetShard] = {}
    for cid in sorted(label_sets):
        mask = np.isin(shard.labels, label_sets[cid])
        if not mask.any():
            raise EmptyShardError(f"client {cid} has no rows for labels {label_sets[cid]}")
        out[cid] = DatasetShard(features=shard.features[mask], labels=shard.labels[mask])
        _LOG.debug("partition client=%s labels=%s rows=%s", cid, label_sets[cid], out[cid].rows)
    return out


def holdout_split(shard: DatasetShard, fraction: float, seed: int) -> tuple[DatasetShard, DatasetShard]:
    """Seeded shuffle, then the last ``fraction`` of rows become the held-out split.

    A one-row shard is used for both splits.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    if shard.rows == 1:
        return shard, shard
    order = Xorshift64Star(seed).permutation(shard.rows)
    n_eval = min(max(1, math.ceil(fraction * shard.rows)), shard.rows - 1)
    cut = shard.rows - n_eval
    return shard.take(order[:cut]), shard.take(order[cut:])


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise IdxFormatError(f"cannot read {path}: {e}") from e


def load_idx(images_path: str | Path, labels_path: str | Path, limit: int) -> DatasetShard:
    """Read an IDX image/label pair (optionally gzipped), pixels scaled to [0, 1]."""
    if limit <= 0:
        raise EmptyShardError("limit must be positive")
    images_path, labels_path = Path(images_path), Path(labels_path)

    raw_images = _read_bytes(images_path)
    if len(raw_images) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, count, n_rows, n_cols = struct.unpack(">IIII", raw_images[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic {magic}, expected {IDX_IMAGES_MAGIC}")

    raw_labels = _read_bytes(labels_path)
    if len(raw_labels) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    l_magic, l_count = struct.unpack(">II", raw_labels[:8])
    if l_magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic {l_magic}, expected {IDX_LABELS_MAGIC}")
    if l_count != count:
        raise IdxFormatError(f"image count {count} does not match label count {l_count}")

    pixels = n_rows * n_cols
    if len(raw_images) - 16 < count * pixels:
        raise IdxFormatError(f"{images_path}: truncated pixel data")
    if len(raw_labels) - 8 < count:
        raise IdxFormatError(f"{labels_path}: truncated label data")

    n = min(limit, count)
    if n == 0:
        raise EmptyShardError(f"{images_path}: no images")
    images = np.frombuffer(raw_images, dtype=np.uint8, count=n * pixels, offset=16)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=n, offset=8)
    features = images.reshape(n, pixels).astype(np.float64) / 255.0
    _LOG.info("idx_loaded images=%s rows=%s pixels=%s", images_path, n, pixels)
    return DatasetShard(features=features, labels=labels.astype(np.int64))
