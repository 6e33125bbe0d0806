"""Dataset generation, ingestion and partitioning across nodes."""
from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidTaskError
from .learning import LocalTask, LossKind, Regularizer

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def make_regression_samples(rng: np.random.Generator, n: int, dim: int,
                            spread: float = 1.0, center: np.ndarray | None = None):
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return center + spread * rng.standard_normal((n, dim))


def make_logistic_data(rng: np.random.Generator, n: int, dim: int, noise: float = 1.0):
    """Binary labels from a random linear teacher plus logistic label noise.

    The last feature column is a constant 1 acting as a bias.
    """
    x = rng.standard_normal((n, dim))
    x[:, -1] = 1.0
    teacher = rng.standard_normal(dim)
    teacher /= np.linalg.norm(teacher)
    logits = 3.0 * (x @ teacher) / max(noise, 1e-12)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    return x, labels


def make_blobs(rng: np.random.Generator, n: int, dim: int, classes: int, spread: float = 1.0):
    centers = 2.0 * rng.standard_normal((classes, dim))
    labels = rng.integers(0, classes, size=n)
    return centers[labels] + spread * rng.standard_normal((n, dim)), labels


def partition(n_samples: int, n_nodes: int, mode: str, rng: np.random.Generator,
              labels: np.ndarray | None = None) -> list[np.ndarray]:
    """Split sample indices among nodes.

    ``iid`` shuffles then cuts into near-equal contiguous blocks;
    ``label_sharded`` sorts by label first, giving each node few classes.
    """
    if n_samples < n_nodes:
        raise InvalidTaskError(f"{n_samples} samples cannot cover {n_nodes} nodes")
    if mode == "iid":
        order = rng.permutation(n_samples)
    elif mode == "label_sharded":
        if labels is None:
            raise InvalidTaskError("label_sharded partition needs labels")
        order = np.argsort(labels, kind="stable")
    else:
        raise InvalidTaskError(f"unknown partition mode {mode!r}")
    return [np.sort(chunk) for chunk in np.array_split(order, n_nodes)]


def tasks_from_partition(features: np.ndarray, labels: np.ndarray | None,
                         parts: Sequence[np.ndarray], loss_kind: LossKind,
                         regularizer: Regularizer, **task_kwargs) -> list[LocalTask]:
    """Build one task per index block with fractions ``|D_i| / |D|``.

    The last fraction absorbs the rounding so that they sum to exactly one.
    """
    total = sum(len(p) for p in parts)
    fracs = [len(p) / total for p in parts]
    fracs[-1] = 1.0 - sum(fracs[:-1])
    return [
        LocalTask(features[p], None if labels is None else labels[p], f,
                  loss_kind=loss_kind, regularizer=regularizer, **task_kwargs)
        for p, f in zip(parts, fracs)
    ]


def quadratic_tasks(rng: np.random.Generator, n_nodes: int, dim: int, samples_per_node: int,
                    curvature: float = 1.0, curvature_spread: float = 0.0,
                    common_minimizer: bool = False, spread: float = 1.0,
                    regularizer: Regularizer | None = None) -> list[LocalTask]:
    """Equal-size quadratic tasks.

    Node ``i`` gets curvature ``curvature * (1 + curvature_spread * u_i)``
    with ``u_i`` evenly spaced in [0, 1]. With ``common_minimizer`` each
    node's samples are re-centred on one shared mean, so every local
    objective has the same minimizer.
    """
    regularizer = regularizer or Regularizer()
    target = rng.standard_normal(dim)
    steps = np.linspace(0.0, 1.0, n_nodes) if n_nodes > 1 else np.zeros(1)
    tasks = []
    for i in range(n_nodes):
        xs = make_regression_samples(rng, samples_per_node, dim, spread, target)
        if common_minimizer:
            xs = xs - xs.mean(axis=0) + target
        tasks.append(LocalTask(xs, None, 1.0 / n_nodes, LossKind.QUADRATIC, regularizer,
                               curvature=curvature * (1.0 + curvature_spread * steps[i])))
    tasks[-1].fraction = 1.0 - sum(t.fraction for t in tasks[:-1])
    return tasks


# --------------------------------------------------------------------------
# file ingestion

def load_csv_dataset(path: str | Path, label_column: int = -1, has_header: bool | None = None):
    """Read feature columns plus one integer label column from a CSV file."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InvalidTaskError(f"{path} holds no rows")
    if has_header is None:
        try:
            [float(c) for c in rows[0]]
            has_header = False
        except ValueError:
            has_header = True
    if has_header:
        rows = rows[1:]
    table = np.asarray(rows, dtype=float)
    labels = table[:, label_column].astype(int)
    features = np.delete(table, label_column % table.shape[1], axis=1)
    return features, labels


def _open_maybe_gz(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (unsigned-byte payload), e.g. the MNIST distribution."""
    path = Path(path)
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    magic, = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise InvalidTaskError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    shape = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(shape)):
        raise InvalidTaskError(f"{path}: payload size does not match header {shape}")
    return data.reshape(shape)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}.get(array.ndim)
    if magic is None:
        raise InvalidTaskError("IDX writer supports 1-D labels or 3-D images")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_idx_dataset(images: str | Path, labels: str | Path, limit: int | None = None):
    """Images flattened and scaled to [0, 1], with their labels."""
    x = read_idx(images)
    y = read_idx(labels)
    if x.shape[0] != y.shape[0]:
        raise InvalidTaskError("image and label files disagree on sample count")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return x.reshape(x.shape[0], -1).astype(float) / 255.0, y.astype(int)
