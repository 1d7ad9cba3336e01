"""Datasets and client sharding."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError, InfeasibleCoverageError
from .models import Batch, QuadraticPayload

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    kind: str
    samples: Batch
    class_count: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def quad(self) -> QuadraticPayload | None:
        return self.samples.quad

    @property
    def labels(self) -> np.ndarray:
        return self.samples.targets

    def subset(self, idx) -> "DatasetHandle":
        return DatasetHandle(self.kind, self.samples.take(np.asarray(idx, dtype=np.intp)),
                             self.class_count)


@dataclass(frozen=True)
class Partition:
    shards: dict  # client id -> np.ndarray of sample indices

    def __len__(self) -> int:
        return len(self.shards)

    def sizes(self) -> dict:
        return {c: len(ix) for c, ix in self.shards.items()}

    def weights(self) -> dict:
        """Shard-size-proportional client weights, summing to one."""
        total = sum(len(ix) for ix in self.shards.values())
        return {c: len(ix) / total for c, ix in self.shards.items()}


def make_quadratic(dim: int, condition: float, seed: int, samples: int = 400,
                   noise: float = 0.1) -> DatasetHandle:
    """Random strongly convex quadratic with noisy per-sample gradients.

    Eigenvalues are log-uniform in ``[1, condition]`` with both ends pinned so
    the condition number is exact; the basis is a random orthogonal matrix.
    Each sample is a noise vector; the noise is centered over the dataset.
    """
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    if not condition >= 1:
        raise ConfigError(f"condition must be >= 1, got {condition}")
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    eig = np.exp(rng.uniform(0.0, np.log(condition), size=dim))
    if dim >= 2:
        eig[np.argmin(eig)] = 1.0
        eig[np.argmax(eig)] = condition
    else:
        eig[:] = 1.0
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    A = (q * eig) @ q.T
    A = 0.5 * (A + A.T)
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ConsistencyError("generated matrix is not positive definite")
    theta_star = rng.standard_normal(dim)
    e = noise * rng.standard_normal((samples, dim))
    e -= e.mean(axis=0)
    payload = QuadraticPayload(A, theta_star)
    return DatasetHandle("synthetic-quadratic", Batch(e, np.zeros(samples), payload))


def make_blobs(samples: int, dim: int, classes: int, seed: int, spread: float = 1.0,
               separation: float = 3.0) -> DatasetHandle:
    """Gaussian class clusters around random centers, balanced over classes."""
    if samples < classes or classes < 2 or dim < 1:
        raise ConfigError("blobs need classes >= 2, dim >= 1 and samples >= classes")
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((classes, dim))
    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    x = centers[labels] + spread * rng.standard_normal((samples, dim))
    return DatasetHandle("synthetic-blobs", Batch(x, labels.astype(np.int64)), classes)


def train_test_split(ds: DatasetHandle, test_fraction: float, seed: int):
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = max(1, int(round(test_fraction * len(ds))))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) == 0:
        raise OSError(f"{path}: empty file")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise OSError(f"{path}: truncated header ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < expected:
        raise OSError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10) -> DatasetHandle:
    """Load an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= class_count:
        raise ConsistencyError(f"label {labels.max()} >= class_count {class_count}")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return DatasetHandle("idx-images", Batch(x, labels.astype(np.int64)), class_count)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, class_count: int | None = None, scale: float = 255.0) -> DatasetHandle:
    """Rows of ``label,feature,...``; a header row is skipped if its first cell is not numeric."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        raise OSError(f"{path}: empty file")
    if not _is_number(rows[0][0]):
        rows = rows[1:]
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise FormatError(f"{path}: ragged rows with widths {sorted(width)}")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from None
    labels = table[:, 0].astype(np.int64)
    if np.any(labels != table[:, 0]) or np.any(labels < 0):
        raise FormatError(f"{path}: labels must be non-negative integers")
    classes = int(class_count) if class_count else int(labels.max()) + 1
    if labels.max() >= classes:
        raise ConsistencyError(f"label {labels.max()} >= class_count {classes}")
    return DatasetHandle("csv", Batch(table[:, 1:] / scale, labels), classes)


def partition_iid(ds: DatasetHandle, clients: int, seed: int) -> Partition:
    if clients < 1:
        raise ConfigError("clients must be >= 1")
    if clients > len(ds):
        raise ConfigError(f"{clients} clients but only {len(ds)} samples")
    perm = np.random.default_rng(seed).permutation(len(ds))
    # array_split puts the remainder on the lowest-numbered shards
    return Partition({c: np.sort(part) for c, part in enumerate(np.array_split(perm, clients))})


def _chunk_counts(class_sizes: np.ndarray, total_chunks: int) -> np.ndarray:
    """Split ``total_chunks`` over classes proportionally, at least one each."""
    k = len(class_sizes)
    counts = np.ones(k, dtype=int)
    spare = total_chunks - k
    if spare > 0:
        share = class_sizes / class_sizes.sum() * total_chunks - 1.0
        share = np.clip(share, 0.0, None)
        if share.sum() > 0:
            share = share / share.sum() * spare
        base = np.floor(share).astype(int)
        counts += base
        rest = spare - base.sum()
        order = np.lexsort((np.arange(k), -(share - base)))
        counts[order[:rest]] += 1
    return np.minimum(counts, class_sizes)


def _rebalance(shards: list[list[int]], labels: np.ndarray) -> None:
    # move samples from large to small shards, only within classes the receiver already holds
    while True:
        sizes = [len(s) for s in shards]
        if max(sizes) - min(sizes) <= 1:
            return
        moved = False
        donors = sorted(range(len(shards)), key=lambda i: (-sizes[i], i))
        receivers = sorted(range(len(shards)), key=lambda i: (sizes[i], i))
        for r in receivers:
            for d in donors:
                if sizes[d] - sizes[r] <= 1:
                    break
                shared = sorted(set(labels[shards[r]]) & set(labels[shards[d]]))
                if not shared:
                    continue
                cls = shared[0]
                pos = [j for j, ix in enumerate(shards[d]) if labels[ix] == cls]
                want = min((sizes[d] - sizes[r]) // 2, len(pos))
                if want <= 0:
                    continue
                take = set(pos[-want:])
                shards[r].extend(shards[d][j] for j in sorted(take))
                shards[d][:] = [ix for j, ix in enumerate(shards[d]) if j not in take]
                moved = True
                break
            if moved:
                break
        if not moved:
            return


def partition_label_skew(ds: DatasetHandle, clients: int, max_labels: int, seed: int) -> Partition:
    """Label-skew split: every shard holds at most ``max_labels`` distinct classes.

    Samples are grouped by class and cut into ``clients * max_labels``
    single-class chunks (each class gets at least one chunk); chunks are
    shuffled and dealt ``max_labels`` per client, then shard sizes are evened
    out by moving samples of classes the receiving shard already holds.
    """
    if ds.class_count < 1:
        raise ConfigError("label-skew partition needs a classification dataset")
    if clients < 1:
        raise ConfigError("clients must be >= 1")
    if not 1 <= max_labels <= ds.class_count:
        raise ConfigError(f"max_labels must be in [1, {ds.class_count}], got {max_labels}")
    labels = np.asarray(ds.labels, dtype=np.int64)
    present = np.unique(labels)
    total_chunks = clients * max_labels
    if total_chunks < len(present):
        raise InfeasibleCoverageError(
            f"{clients} clients x {max_labels} labels cannot cover {len(present)} classes")
    if total_chunks > len(ds):
        raise ConfigError(f"{total_chunks} chunks but only {len(ds)} samples")

    rng = np.random.default_rng(seed)
    by_class = []
    for c in present:
        idx = np.flatnonzero(labels == c)
        by_class.append(idx[rng.permutation(idx.size)])
    sizes = np.array([b.size for b in by_class])
    counts = _chunk_counts(sizes, total_chunks)
    # classes too small for their share leave chunks unassigned; give them to the largest classes
    while counts.sum() < total_chunks:
        room = sizes - counts
        counts[int(np.argmax(room))] += 1
    chunks = []
    for idx, k in zip(by_class, counts):
        chunks.extend(np.array_split(idx, k))
    order = rng.permutation(len(chunks))
    shards = []
    for c in range(clients):
        picked = order[c * max_labels:(c + 1) * max_labels]
        shards.append([int(i) for j in picked for i in chunks[j]])
    _rebalance(shards, labels)
    return Partition({c: np.sort(np.array(s, dtype=np.intp)) for c, s in enumerate(shards)})


def distinct_labels(ds: DatasetHandle, part: Partition) -> dict:
    return {c: int(np.unique(ds.labels[ix]).size) for c, ix in part.shards.items()}
