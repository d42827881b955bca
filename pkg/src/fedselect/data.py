"""Synthetic datasets, non-IID partitioning, CSV ingestion and batching."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .model import Batch, ConfigError


class DataError(ValueError):
    """Malformed dataset file or unusable dataset."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise DataError("inputs must be 2-D with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count)

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    shard: int
    train_size: int
    test_size: int
    seed: int = 0


@dataclass(frozen=True)
class ClientData:
    train: Dataset
    test: Dataset
    classes: tuple[int, ...]
    # pool row indices, kept for disjointness checks
    train_index: np.ndarray
    test_index: np.ndarray


def synth_blobs(
    n_classes: int,
    input_dim: int,
    n_per_class: int,
    spread: float,
    seed: int,
    latent_dim: int = 0,
) -> Dataset:
    """Isotropic Gaussian blobs around standard-normal class means.

    With ``latent_dim > 0`` the means live in a random ``latent_dim``
    dimensional subspace and the remaining directions carry only noise.
    """
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if not 0 <= latent_dim <= input_dim:
        raise ConfigError("latent_dim must lie in [0, input_dim]")
    rng = np.random.default_rng(seed)
    if latent_dim:
        basis, _ = np.linalg.qr(rng.standard_normal((input_dim, latent_dim)))
        means = rng.standard_normal((n_classes, latent_dim)) @ basis.T
    else:
        means = rng.standard_normal((n_classes, input_dim))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    inputs = means[labels] + spread * rng.standard_normal((len(labels), input_dim))
    return Dataset(inputs, labels, n_classes)


def class_assignment(n_clients: int, n_classes: int, shard: int) -> list[tuple[int, ...]]:
    """Deal classes round-robin: client ``k`` gets ``k*s, k*s+1, ... (mod K)``."""
    if not 1 <= shard <= n_classes:
        raise ConfigError(f"shard must lie in [1, {n_classes}], got {shard}")
    return [
        tuple(sorted({(k * shard + j) % n_classes for j in range(shard)}))
        for k in range(n_clients)
    ]


def _split_even(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (j < extra) for j in range(parts)]


def shard_partition(ds: Dataset, spec: PartitionSpec) -> list[ClientData]:
    """Label-shard partition with disjoint samples across clients and splits.

    Each client draws ``train_size`` and ``test_size`` samples split as
    evenly as possible over its ``shard`` classes.
    """
    if spec.n_clients < 1 or spec.train_size < 1 or spec.test_size < 1:
        raise ConfigError("n_clients, train_size and test_size must be positive")
    classes = class_assignment(spec.n_clients, ds.class_count, spec.shard)
    rng = np.random.default_rng(spec.seed)
    pools = {c: list(rng.permutation(np.flatnonzero(ds.labels == c))) for c in range(ds.class_count)}

    need = {c: 0 for c in pools}
    for cls in classes:
        for c, n_tr, n_te in zip(cls, _split_even(spec.train_size, len(cls)), _split_even(spec.test_size, len(cls))):
            need[c] += n_tr + n_te
    short = {c: (need[c], len(pools[c])) for c in pools if need[c] > len(pools[c])}
    if short:
        c, (want, have) = next(iter(short.items()))
        raise ConfigError(f"class {c} needs {want} samples but the pool has {have}")

    out = []
    for cls in classes:
        tr, te = [], []
        for c, n_tr, n_te in zip(cls, _split_even(spec.train_size, len(cls)), _split_even(spec.test_size, len(cls))):
            pool = pools[c]
            tr.extend(pool[:n_tr])
            te.extend(pool[n_tr : n_tr + n_te])
            del pool[: n_tr + n_te]
        tr_idx = np.sort(np.asarray(tr, dtype=np.intp))
        te_idx = np.sort(np.asarray(te, dtype=np.intp))
        out.append(ClientData(ds.subset(tr_idx), ds.subset(te_idx), cls, tr_idx, te_idx))
    return out


def apply_feature_shift(
    ds: Dataset, client_id: int, severity: float, seed: int, noise_stream: int = 0
) -> Dataset:
    """Per-client random affine distortion plus additive noise on the inputs.

    The affine map depends only on ``(seed, client_id)``; ``noise_stream``
    selects an independent noise draw so train and test splits of one client
    share the map but not the noise.
    """
    if severity < 0:
        raise ConfigError("severity must be non-negative")
    if severity == 0:
        return Dataset(ds.inputs.copy(), ds.labels.copy(), ds.class_count)
    rng = np.random.default_rng([seed, client_id])
    m = ds.input_dim
    mix = np.eye(m) + 0.1 * severity * rng.standard_normal((m, m)) / np.sqrt(m)
    offset = 0.2 * severity * rng.standard_normal(m)
    noise = 0.05 * severity * np.random.default_rng([seed, client_id, noise_stream]).standard_normal(ds.inputs.shape)
    return Dataset(ds.inputs @ mix + offset + noise, ds.labels.copy(), ds.class_count)


def load_csv(path: str | Path) -> Dataset:
    """Read ``f0,...,f{m-1},label`` rows; labels are re-indexed densely in sorted order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = [f"f{i}" for i in range(len(header) - 1)] + ["label"]
        if len(header) < 2 or header != expected:
            raise DataError(f"{path}:1: header must be f0..f{{m-1}},label, got {','.join(header)}")
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            raw_labels.append(row[-1].strip())
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        keys = [int(v) for v in raw_labels]
    except ValueError:
        keys = raw_labels
    uniq = sorted(set(keys))
    index = {v: i for i, v in enumerate(uniq)}
    labels = np.array([index[v] for v in keys], dtype=np.intp)
    return Dataset(np.array(rows, dtype=np.float64), labels, max(len(uniq), 2))


def write_csv(ds: Dataset, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.input_dim)] + ["label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def batches(ds: Dataset, batch_size: int, rng: np.random.Generator) -> list[Batch]:
    """Shuffle with ``rng`` then cut into contiguous batches; the last may be short."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if len(ds) == 0:
        raise DataError("cannot batch an empty dataset")
    order = rng.permutation(len(ds))
    return [
        Batch(ds.inputs[order[i : i + batch_size]], ds.labels[order[i : i + batch_size]])
        for i in range(0, len(ds), batch_size)
    ]


def label_histogram(ds: Dataset) -> np.ndarray:
    counts = np.bincount(ds.labels, minlength=ds.class_count).astype(np.float64)
    return counts / counts.sum()

