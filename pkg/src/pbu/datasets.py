"""Synthetic desk-scale datasets and CSV ingestion."""

import csv

import numpy as np

from .classifier import Dataset, format_float
from .errors import ContractError, ParseError
from .rng import Rng


def blob_centers(d, C, seed, radius=4.0):
    """Class centres ``radius * (+/-) e_{c mod d}`` under a seeded rotation.

    Classes beyond the first ``d`` reuse an axis with the opposite sign, so
    centres stay distinct for ``C <= 2d``.
    """
    rng = Rng(seed)
    Q, R = np.linalg.qr(rng.normal(d * d).reshape(d, d))
    Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
    centers = np.zeros((C, d))
    for c in range(C):
        sign = -1.0 if (c // d) % 2 else 1.0
        centers[c, c % d] = sign * radius
    return centers @ Q.T, rng


def gen_blobs(d, C, n_per_class, spread, seed, name="blobs"):
    if d < 1:
        raise ContractError(f"d must be >= 1, got {d}")
    if C < 2:
        raise ContractError(f"need at least 2 classes, got {C}")
    if not spread > 0:
        raise ContractError(f"spread must be > 0, got {spread}")
    centers, rng = blob_centers(d, C, seed)
    X = np.vstack(
        [centers[c] + rng.normal(n_per_class * d, std=spread).reshape(n_per_class, d)
         for c in range(C)]
    )
    y = np.repeat(np.arange(C), n_per_class)
    return Dataset(X, y, name)


def gen_rings(C, n_per_class, noise, seed, name="rings"):
    """Concentric annuli in 2-D; class ``c`` sits at radius ``1 + c``."""
    if C < 2:
        raise ContractError(f"need at least 2 classes, got {C}")
    if noise < 0:
        raise ContractError(f"noise must be >= 0, got {noise}")
    rng = Rng(seed)
    X, y = [], []
    for c in range(C):
        angle = 2.0 * np.pi * rng.uniform(n_per_class)
        radius = 1.0 + c + (rng.normal(n_per_class, std=noise) if noise > 0 else 0.0)
        X.append(np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
        y.append(np.full(n_per_class, c))
    return Dataset(np.vstack(X), np.concatenate(y), name)


def train_test_split_per_class(data, n_train):
    """First ``n_train`` examples of each class go to train, the rest to test."""
    train_idx, test_idx = [], []
    for c, idx in sorted(data.class_index.items()):
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return (
        data.subset(train_idx, f"{data.name}/train"),
        data.subset(test_idx, f"{data.name}/test"),
    )


def save_csv(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(data.dim)] + ["label"])
        for x, y in zip(data.X, data.y):
            w.writerow([format_float(v) for v in x] + [int(y)])


def load_csv(path, num_classes=None, name=None):
    """Read ``f0,...,f{d-1},label`` rows; errors carry 1-based line numbers."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("missing header", 1)
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(d)]:
        raise ParseError("header must be 'f0,...,f{d-1},label'", 1)
    X, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise ParseError(f"expected {d + 1} cells, got {len(row)}", lineno)
        try:
            feats = [float(v) for v in row[:-1]]
            label = int(row[-1])
        except ValueError:
            raise ParseError("non-numeric cell", lineno) from None
        if not np.all(np.isfinite(feats)):
            raise ParseError("non-finite feature", lineno)
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ParseError(f"label {label} outside 0..{(num_classes or 0) - 1}", lineno)
        X.append(feats)
        y.append(label)
    return Dataset(np.array(X).reshape(-1, d), np.array(y, dtype=np.int64), name or str(path))
