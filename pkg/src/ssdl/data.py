"""Dataset ingestion, preprocessing and stratified splitting."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (DataAlignmentError, DataFormatError, DataTruncatedError,
                     InvalidConfigurationError)

Array = np.ndarray

_IDX_IMAGE_MAGIC = 2051
_IDX_LABEL_MAGIC = 2049


@dataclass
class LabeledDataset:
    """Samples as columns of X with integer labels y in [0, C)."""

    X: Array
    y: Array
    class_count: int


@dataclass
class SplitSpec:
    labelled_per_class: int
    unlabelled_per_class: int
    test_per_class: int
    seed: int = 0

    def __post_init__(self):
        if min(self.labelled_per_class, self.unlabelled_per_class,
               self.test_per_class) < 0:
            raise InvalidConfigurationError("per-class counts must be >= 0")


@dataclass
class Split:
    """Stratified disjoint split; labelled columns are class-ordered."""

    X_l: Array
    Y: Array
    X_u: Array
    X_test: Array
    y_test: Array
    y_l: Array
    y_u: Array


def labels_to_matrix(y: Array, class_count: int) -> Array:
    """(C, N) matrix with +1 on the true class row and -1 elsewhere."""
    Y = -np.ones((class_count, len(y)))
    Y[y, np.arange(len(y))] = 1.0
    return Y


def _open_maybe_gzip(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else \
        open(path, "rb")


def _read_exact(f, count: int, path) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise DataTruncatedError(f"{path}: expected {count} more bytes, "
                                 f"found {len(buf)}")
    return buf


def load_idx_images(path) -> Array:
    """Read a big-endian IDX image container (gzip transparent).

    Pixels are flattened column-major per image into float64 columns in
    [0, 255].
    """
    with _open_maybe_gzip(path) as f:
        magic, count, rows, cols = struct.unpack(
            ">4I", _read_exact(f, 16, path))
        if magic != _IDX_IMAGE_MAGIC:
            raise DataFormatError(f"{path}: bad image magic {magic}")
        raw = _read_exact(f, count * rows * cols, path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    # column-major flatten: stack image columns
    return images.transpose(0, 2, 1).reshape(count, rows * cols) \
        .astype(float).T


def load_idx_labels(path) -> Array:
    with _open_maybe_gzip(path) as f:
        magic, count = struct.unpack(">2I", _read_exact(f, 8, path))
        if magic != _IDX_LABEL_MAGIC:
            raise DataFormatError(f"{path}: bad label magic {magic}")
        return np.frombuffer(_read_exact(f, count, path),
                             dtype=np.uint8).astype(int)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label pair into a dataset."""
    X = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(y) != X.shape[1]:
        raise DataAlignmentError(
            f"{X.shape[1]} images but {len(y)} labels")
    return LabeledDataset(X=X, y=y,
                          class_count=int(y.max()) + 1 if len(y) else 0)


def load_delimited(path, label_column: int = 0,
                   delimiter: str | None = None) -> LabeledDataset:
    """Numeric text table, one sample per row; labels remapped to [0, C)."""
    rows = []
    labels = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            cells = line.split(delimiter) if delimiter else line.split()
            if label_column >= len(cells):
                raise DataFormatError(
                    f"{path}:{i + 1}: no column {label_column} "
                    f"({len(cells)} cells)")
            try:
                values = [float(c) for c in cells]
            except ValueError:
                bad = next(j for j, c in enumerate(cells)
                           if not _is_float(c))
                raise DataFormatError(
                    f"{path}:{i + 1}: non-numeric cell in column {bad}: "
                    f"{cells[bad]!r}") from None
            labels.append(values.pop(label_column))
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    X = np.asarray(rows, dtype=float).T
    raw = np.asarray(labels)
    if not np.allclose(raw, np.round(raw)):
        raise DataFormatError(f"{path}: labels must be integers")
    raw = np.round(raw).astype(int)
    classes = np.unique(raw)
    y = np.searchsorted(classes, raw)
    return LabeledDataset(X=X, y=y, class_count=len(classes))


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def preprocess(X: Array, steps) -> Array:
    """Apply preprocessing steps in order.

    Steps: "standardize_features" (per-feature mean 0 / std 1 over this
    matrix; zero-variance features are only centered), "l2_normalize_columns"
    (zero columns pass through), "scale:<s>".
    """
    X = np.array(X, dtype=float, copy=True)
    for step in steps:
        if step == "standardize_features":
            mean = X.mean(axis=1, keepdims=True)
            std = X.std(axis=1, keepdims=True)
            X = (X - mean) / np.where(std > 0, std, 1.0)
        elif step == "l2_normalize_columns":
            norms = np.linalg.norm(X, axis=0, keepdims=True)
            X = X / np.where(norms > 0, norms, 1.0)
        elif step.startswith("scale:"):
            X = X * float(step.split(":", 1)[1])
        else:
            raise InvalidConfigurationError(f"unknown preprocessing step "
                                            f"{step!r}")
    return X


def add_gaussian_noise(X: Array, sigma: float, seed: int) -> Array:
    """Additive noise with std sigma * mean(X^2); deterministic per seed."""
    if sigma < 0:
        raise InvalidConfigurationError("sigma must be >= 0")
    if sigma == 0:
        return X.copy()
    std = sigma * float(np.mean(X * X))
    rng = np.random.default_rng(seed)
    return X + rng.normal(0.0, std, size=X.shape)


def random_projection(X: Array, d_out: int, seed: int) -> Array:
    """Project columns by a seeded Gaussian matrix scaled by 1/sqrt(d_out)."""
    if d_out < 1:
        raise InvalidConfigurationError("d_out must be >= 1")
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((d_out, X.shape[0])) / np.sqrt(d_out)
    return R @ X


def split(ds: LabeledDataset, spec: SplitSpec) -> Split:
    """Stratified disjoint labelled/unlabelled/test split, seeded."""
    rng = np.random.default_rng(spec.seed)
    need = (spec.labelled_per_class + spec.unlabelled_per_class
            + spec.test_per_class)
    idx_l, idx_u, idx_t = [], [], []
    for c in range(ds.class_count):
        pool = np.where(ds.y == c)[0]
        if len(pool) < need:
            raise InvalidConfigurationError(
                f"class {c} has {len(pool)} samples, split needs {need}")
        perm = rng.permutation(pool)
        a = spec.labelled_per_class
        b = a + spec.unlabelled_per_class
        idx_l.append(perm[:a])
        idx_u.append(perm[a:b])
        idx_t.append(perm[b:need])
    idx_l = np.concatenate(idx_l)
    idx_u = np.concatenate(idx_u)
    idx_t = np.concatenate(idx_t)
    y_l = ds.y[idx_l]
    return Split(X_l=ds.X[:, idx_l],
                 Y=labels_to_matrix(y_l, ds.class_count),
                 X_u=ds.X[:, idx_u],
                 X_test=ds.X[:, idx_t],
                 y_test=ds.y[idx_t],
                 y_l=y_l,
                 y_u=ds.y[idx_u])


def synthetic_blobs(class_count: int = 2, per_class: int = 100, dim: int = 2,
                    separation: float = 4.0, seed: int = 0) -> LabeledDataset:
    """Gaussian class blobs: a self-contained toy dataset for smoke runs.

    Class centers sit on a circle of radius separation in the first two
    dimensions, so the separation parameter is meaningful regardless of the
    seed (which only drives the unit-variance scatter).
    """
    if dim < 2:
        raise InvalidConfigurationError("blobs need dim >= 2")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    centers = np.zeros((dim, class_count))
    centers[0] = separation * np.cos(angles)
    centers[1] = separation * np.sin(angles)
    X = np.hstack([centers[:, [c]] + rng.standard_normal((dim, per_class))
                   for c in range(class_count)])
    y = np.repeat(np.arange(class_count), per_class)
    return LabeledDataset(X=X, y=y, class_count=class_count)


def load_usps(directory) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the USPS digit scans from a local directory.

    Accepts either the classic delimited pair zip.train / zip.test
    (optionally gzipped; label first, then 256 pixel values) or a usps.h5
    with train/test groups holding 'data' and 'target'.  Returns
    (train, test).
    """
    for train_name, test_name in (("zip.train", "zip.test"),
                                  ("zip.train.gz", "zip.test.gz")):
        train_path = os.path.join(directory, train_name)
        test_path = os.path.join(directory, test_name)
        if os.path.exists(train_path) and os.path.exists(test_path):
            return (_load_zip_digits(train_path), _load_zip_digits(test_path))
    h5_path = os.path.join(directory, "usps.h5")
    if os.path.exists(h5_path):
        import h5py
        with h5py.File(h5_path, "r") as f:
            out = []
            for group in ("train", "test"):
                X = np.asarray(f[group]["data"], dtype=float).T
                y = np.asarray(f[group]["target"], dtype=int)
                out.append(LabeledDataset(X=X, y=y,
                                          class_count=int(y.max()) + 1))
        return tuple(out)
    raise DataFormatError(
        f"no USPS data under {directory}: expected zip.train/zip.test"
        f"(.gz) or usps.h5")


def _load_zip_digits(path) -> LabeledDataset:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rt") as f:
            table = np.loadtxt(f)
    else:
        table = np.loadtxt(path)
    y = table[:, 0].astype(int)
    return LabeledDataset(X=table[:, 1:].T.astype(float), y=y,
                          class_count=int(y.max()) + 1)
