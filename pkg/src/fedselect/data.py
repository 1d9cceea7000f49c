"""Dataset ingestion and non-IID client partitioners."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import LabeledDataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_DIRICHLET_RETRIES = 100


class IdxParseError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class IdxCountMismatch(IdxParseError):
    pass


class PartitionError(ValueError):
    pass


def synth_blobs(
    num_classes: int,
    input_dim: int,
    n_per_class: int,
    spread: float,
    rng: np.random.Generator,
) -> LabeledDataset:
    """Gaussian clusters around per-class means drawn from N(0, I).

    Samples are laid out class by class. ``spread`` is the per-coordinate
    standard deviation around each mean; zero gives the means themselves.
    """
    if num_classes < 2 or n_per_class < 1 or input_dim < 1:
        raise ValueError("need num_classes >= 2, n_per_class >= 1, input_dim >= 1")
    if spread < 0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    means = rng.normal(size=(num_classes, input_dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.normal(size=(len(labels), input_dim))
    features = means[labels] + spread * noise
    return LabeledDataset(features, labels, bits_per_sample=input_dim * 32)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _idx_header(path, raw: bytes, magic: int, ndim: int) -> tuple[int, ...]:
    header_len = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxParseError(path, len(raw), "file truncated inside magic number")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise IdxParseError(path, 0, f"bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header_len:
        raise IdxParseError(path, len(raw), "file truncated inside dimension header")
    return struct.unpack_from(f">{ndim}I", raw, 4)


def _idx_payload(path, raw: bytes, start: int, size: int) -> np.ndarray:
    if len(raw) < start + size:
        raise IdxParseError(
            path, len(raw), f"file truncated: payload needs bytes up to offset {start + size}"
        )
    if len(raw) > start + size:
        raise IdxParseError(path, start + size, "trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=start)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an unsigned-byte IDX image/label pair (MNIST layout); ``.gz`` is accepted."""
    img_raw = _read_bytes(images_path)
    lbl_raw = _read_bytes(labels_path)
    n_img, rows, cols = _idx_header(images_path, img_raw, IDX_IMAGES_MAGIC, 3)
    (n_lbl,) = _idx_header(labels_path, lbl_raw, IDX_LABELS_MAGIC, 1)
    if n_img != n_lbl:
        raise IdxCountMismatch(labels_path, 4, f"{n_lbl} labels for {n_img} images")
    pixels = _idx_payload(images_path, img_raw, 16, n_img * rows * cols)
    labels = _idx_payload(labels_path, lbl_raw, 8, n_lbl)
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), bits_per_sample=rows * cols * 8)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of load_idx for uint8 arrays ``images[n, rows, cols]`` and ``labels[n]``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    )
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


@dataclass
class PartitionPlan:
    assignments: list[np.ndarray]
    scheme: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def validate(self, n_source: int) -> None:
        seen = np.zeros(n_source, dtype=bool)
        for k, idx in enumerate(self.assignments):
            if len(idx) == 0:
                raise PartitionError(f"client {k} has no samples")
            if idx.min() < 0 or idx.max() >= n_source:
                raise PartitionError(f"client {k} references indices outside the source")
            if seen[idx].any() or len(np.unique(idx)) != len(idx):
                raise PartitionError(f"client {k} overlaps another client")
            seen[idx] = True

    def label_histogram(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        return np.stack([np.bincount(labels[idx], minlength=num_classes) for idx in self.assignments])

    def to_json(self) -> str:
        return json.dumps(
            {
                "scheme": self.scheme,
                "params": self.params,
                "seed": self.seed,
                "assignments": [a.tolist() for a in self.assignments],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> PartitionPlan:
        doc = json.loads(text)
        return cls(
            [np.asarray(a, dtype=np.int64) for a in doc["assignments"]],
            doc["scheme"],
            doc.get("params", {}),
            doc.get("seed"),
        )


def partition_hetero_dirichlet(
    ds: LabeledDataset,
    num_clients: int,
    alpha: float,
    rng: np.random.Generator,
    min_size: int = 10,
) -> PartitionPlan:
    """Per-label Dirichlet(alpha) proportion split, resampled until every client has min_size.

    Clients already above the mean share n/N get no further mass for later
    labels, which keeps the size spread bounded as in the usual construction.
    """
    n = len(ds)
    if num_clients < 2:
        raise PartitionError(f"need at least 2 clients, got {num_clients}")
    if alpha <= 0:
        raise PartitionError(f"alpha must be > 0, got {alpha}")
    if num_clients * min_size > n:
        raise PartitionError(f"min_size {min_size} infeasible: {num_clients} clients over {n} samples")
    classes = np.unique(ds.labels)
    for _ in range(MAX_DIRICHLET_RETRIES):
        buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        counts = np.zeros(num_clients, dtype=np.int64)
        for c in classes:
            idx_c = np.flatnonzero(ds.labels == c)
            rng.shuffle(idx_c)
            props = rng.dirichlet(np.full(num_clients, alpha))
            props = props * (counts < n / num_clients)
            props = props / props.sum()
            cuts = (np.cumsum(props) * len(idx_c)).astype(np.int64)[:-1]
            for k, part in enumerate(np.split(idx_c, cuts)):
                buckets[k].append(part)
                counts[k] += len(part)
        if counts.min() >= min_size:
            assignments = [np.sort(np.concatenate(b)) for b in buckets]
            return PartitionPlan(
                assignments, "hetero_dirichlet", {"alpha": alpha, "min_size": min_size}
            )
    raise PartitionError(
        f"no Dirichlet draw gave every client >= {min_size} samples in {MAX_DIRICHLET_RETRIES} tries"
    )


def partition_shards(
    ds: LabeledDataset,
    num_clients: int,
    shards_per_client: int = 2,
    rng: np.random.Generator | None = None,
) -> PartitionPlan:
    """Label-sorted equal shards, ``shards_per_client`` per client.

    Shards never straddle a label boundary, so a client sees at most
    ``shards_per_client`` labels. The shard size starts at
    ``n // (N * shards_per_client)`` and shrinks until enough single-label
    shards exist; leftovers are dropped. Without ``rng`` client ``k`` gets
    shards ``k, k + N, k + 2N, ...``; with it the shard order is shuffled first.
    """
    n_shards = num_clients * shards_per_client
    if shards_per_client < 1 or num_clients < 1:
        raise PartitionError("num_clients and shards_per_client must be >= 1")
    if n_shards > len(ds):
        raise PartitionError(f"{n_shards} shards requested from {len(ds)} samples")
    order = np.argsort(ds.labels, kind="stable")
    by_label = np.split(order, np.flatnonzero(np.diff(ds.labels[order])) + 1)
    size = len(ds) // n_shards
    while sum(len(b) // size for b in by_label) < n_shards:
        size -= 1
    shards = [b[i * size : (i + 1) * size] for b in by_label for i in range(len(b) // size)]
    shards = shards[:n_shards]
    if rng is not None:
        shards = [shards[i] for i in rng.permutation(n_shards)]
    assignments = [
        np.sort(np.concatenate(shards[k::num_clients])) for k in range(num_clients)
    ]
    return PartitionPlan(assignments, "shards", {"shards_per_client": shards_per_client})


def _split_by_label_sets(
    ds: LabeledDataset,
    label_sets: list[list[int]],
    rng: np.random.Generator | None,
    size_jitter: float = 0.0,
) -> list[np.ndarray]:
    holders: dict[int, list[int]] = {}
    for k, labels in enumerate(label_sets):
        for c in labels:
            holders.setdefault(c, []).append(k)
    parts: list[list[np.ndarray]] = [[] for _ in label_sets]
    for c in sorted(holders):
        idx_c = np.flatnonzero(ds.labels == c)
        owners = holders[c]
        if len(idx_c) < len(owners):
            raise PartitionError(f"label {c} has {len(idx_c)} samples for {len(owners)} clients")
        if rng is not None:
            rng.shuffle(idx_c)
        if size_jitter > 0:
            weights = 1.0 + size_jitter * rng.uniform(-1.0, 1.0, size=len(owners))
            cuts = np.floor(np.cumsum(weights / weights.sum()) * len(idx_c)).astype(np.int64)[:-1]
            # every owner keeps at least one sample of the label
            m = len(owners)
            for i in range(m - 1):
                lo = cuts[i - 1] + 1 if i else 1
                cuts[i] = min(max(cuts[i], lo), len(idx_c) - (m - 1 - i))
            chunks = np.split(idx_c, cuts)
        else:
            chunks = np.array_split(idx_c, len(owners))
        for k, chunk in zip(owners, chunks):
            parts[k].append(chunk)
    return [np.sort(np.concatenate(p)) for p in parts]


def _round_robin_label_sets(num_clients: int, k: int, classes: np.ndarray) -> list[list[int]]:
    c = len(classes)
    return [[int(classes[(i * k + j) % c]) for j in range(k)] for i in range(num_clients)]


def partition_noniid_label(
    ds: LabeledDataset,
    num_clients: int,
    labels_per_client: int = 2,
    size_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PartitionPlan:
    """Each client holds exactly ``labels_per_client`` labels; label samples split among holders.

    Label sets are consecutive blocks of a seeded label permutation, so every
    label has the same number of holders whenever N * labels_per_client is a
    multiple of the class count. ``size_jitter`` in [0, 1) perturbs each
    holder's share by a uniform factor in ``1 ± size_jitter``.
    """
    classes = np.unique(ds.labels)
    if labels_per_client < 1 or labels_per_client > len(classes):
        raise PartitionError(f"labels_per_client={labels_per_client} with {len(classes)} classes")
    if not 0.0 <= size_jitter < 1.0:
        raise PartitionError(f"size_jitter must be in [0, 1), got {size_jitter}")
    if size_jitter > 0 and rng is None:
        raise PartitionError("size_jitter > 0 needs an rng")
    perm = classes if rng is None else rng.permutation(classes)
    label_sets = _round_robin_label_sets(num_clients, labels_per_client, perm)
    assignments = _split_by_label_sets(ds, label_sets, rng, size_jitter)
    return PartitionPlan(
        assignments,
        "noniid_label",
        {"labels_per_client": labels_per_client, "size_jitter": size_jitter},
    )


def label_skew_partition(
    ds: LabeledDataset,
    num_clients: int,
    k: int,
    rng: np.random.Generator | None = None,
) -> PartitionPlan:
    """Client i gets labels ``(i*k + j) mod C`` for j < k; samples split evenly among holders."""
    classes = np.unique(ds.labels)
    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    if k > len(classes):
        raise PartitionError(f"k={k} exceeds the {len(classes)} available labels")
    label_sets = _round_robin_label_sets(num_clients, k, classes)
    return PartitionPlan(_split_by_label_sets(ds, label_sets, rng), "label_skew", {"k": k})


def partition_iid(ds: LabeledDataset, num_clients: int, rng: np.random.Generator) -> PartitionPlan:
    """Uniform random split into near-equal parts."""
    if num_clients > len(ds):
        raise PartitionError(f"{num_clients} clients over {len(ds)} samples")
    parts = np.array_split(rng.permutation(len(ds)), num_clients)
    return PartitionPlan([np.sort(p) for p in parts], "iid", {})
