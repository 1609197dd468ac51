"""Dataset files, protocol splits, normalization and synthetic clusters.

Binary formats (all integers little-endian):

``BSODF1`` features
    magic, version (u32, currently 1), d (u32), n (u32), then ``n*d``
    float32 values, sample-major (each sample's ``d`` values contiguous).
``BSODL1`` labels
    magic, n (u32), then ``n`` u32 class ids.

Loaders also accept CSV (one sample per line) and the big-endian IDX files
MNIST ships as (pixels are scaled to ``[0, 1]``).
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError

FEATURE_MAGIC = b"BSODF1"
LABEL_MAGIC = b"BSODL1"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<6sIII")
_LABEL_HEADER = struct.Struct("<6sI")
_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801

NORMALIZATIONS = ("none", "zero-center", "unit-norm")


def _atomic_write(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_features(path, X) -> None:
    """Write a ``d x n`` matrix as ``BSODF1`` (values stored as float32)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError(f"features must be 2-D, got shape {X.shape}")
    d, n = X.shape
    body = np.ascontiguousarray(X.T, dtype="<f4").tobytes()
    _atomic_write(path, _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, d, n) + body)


def save_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= 2**32):
        raise ConfigError("labels must fit in an unsigned 32-bit integer")
    body = labels.astype("<u4").tobytes()
    _atomic_write(path, _LABEL_HEADER.pack(LABEL_MAGIC, labels.size) + body)


def save_features_csv(path, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for column in X.T:
            writer.writerow([repr(float(v)) for v in column])


def save_labels_csv(path, labels) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(labels).tolist():
            fh.write(f"{int(v)}\n")


def _read_idx(raw: bytes, path):
    if len(raw) < 4:
        raise FormatError("truncated IDX header", path, len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX header", path, len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header != count:
        raise FormatError(
            f"IDX payload has {len(raw) - header} bytes, header declares {count}", path, len(raw)
        )
    return magic, dims, np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _load_binary_features(raw: bytes, path) -> np.ndarray:
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError("truncated BSODF1 header", path, len(raw))
    _, version, d, n = _FEATURE_HEADER.unpack_from(raw, 0)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported BSODF1 version {version}", path, 6)
    if d < 1:
        raise FormatError("feature dimension must be >= 1", path, 10)
    expected = _FEATURE_HEADER.size + 4 * d * n
    if len(raw) < expected:
        raise FormatError(
            f"truncated payload: header declares d={d}, n={n} ({expected} bytes), file has {len(raw)}",
            path,
            len(raw),
        )
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes after payload", path, expected)
    values = np.frombuffer(raw, dtype="<f4", offset=_FEATURE_HEADER.size, count=d * n)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite feature value", path, _FEATURE_HEADER.size + 4 * int(bad[0]))
    return values.reshape(n, d).T.astype(np.float64)


def _load_csv_features(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise FormatError(f"unparseable value: {exc}", path, lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise FormatError(f"row has {len(vals)} values, expected {width}", path, lineno)
            if not all(np.isfinite(vals)):
                raise FormatError("non-finite feature value", path, lineno)
            rows.append(vals)
    if width is None:
        raise FormatError("empty feature file", path, 0)
    return np.array(rows, dtype=np.float64).T.copy()


def load_features(path) -> np.ndarray:
    """Load a ``d x n`` float64 feature matrix (BSODF1, IDX images or CSV)."""
    raw = Path(path).read_bytes()
    if raw.startswith(FEATURE_MAGIC):
        return _load_binary_features(raw, path)
    if len(raw) >= 4 and struct.unpack_from(">I", raw, 0)[0] == _IDX_IMAGES:
        _, dims, arr = _read_idx(raw, path)
        return (arr.reshape(dims[0], -1).T / 255.0).astype(np.float64)
    if raw[:6].isascii() and raw[:1] not in (b"\x00",):
        return _load_csv_features(path)
    raise FormatError(f"unrecognized feature file magic {raw[:6]!r}", path, 0)


def load_labels(path) -> np.ndarray:
    """Load a label vector of non-negative integers (BSODL1, IDX or CSV)."""
    raw = Path(path).read_bytes()
    if raw.startswith(LABEL_MAGIC):
        if len(raw) < _LABEL_HEADER.size:
            raise FormatError("truncated BSODL1 header", path, len(raw))
        _, n = _LABEL_HEADER.unpack_from(raw, 0)
        expected = _LABEL_HEADER.size + 4 * n
        if len(raw) != expected:
            raise FormatError(
                f"payload size {len(raw)} does not match n={n} (expected {expected})",
                path,
                min(len(raw), expected),
            )
        return np.frombuffer(raw, dtype="<u4", offset=_LABEL_HEADER.size).astype(np.int64)
    if len(raw) >= 4 and struct.unpack_from(">I", raw, 0)[0] == _IDX_LABELS:
        _, _, arr = _read_idx(raw, path)
        return arr.astype(np.int64)
    out = []
    for lineno, line in enumerate(raw.decode("ascii", errors="replace").splitlines(), start=1):
        for cell in line.split(","):
            cell = cell.strip()
            if not cell:
                continue
            try:
                v = int(cell)
            except ValueError:
                raise FormatError(f"label {cell!r} is not an integer", path, lineno) from None
            if v < 0:
                raise FormatError(f"negative label {v}", path, lineno)
            out.append(v)
    return np.array(out, dtype=np.int64)


def check_pair(X, labels) -> None:
    """Raise :class:`ConsistencyError` when feature and label counts differ."""
    n = np.asarray(X).shape[1]
    if len(labels) != n:
        raise ConsistencyError(f"{n} feature columns but {len(labels)} labels")


@dataclass
class DatasetMeta:
    """Index split of a labeled dataset into query / retrieval / training."""

    name: str
    d: int
    n: int
    class_count: int
    query: np.ndarray
    retrieval: np.ndarray
    training: np.ndarray

    def to_json(self, path) -> None:
        payload = asdict(self)
        for key in ("query", "retrieval", "training"):
            payload[key] = np.asarray(payload[key]).tolist()
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path) -> "DatasetMeta":
        payload = json.loads(Path(path).read_text())
        for key in ("query", "retrieval", "training"):
            payload[key] = np.asarray(payload[key], dtype=np.int64)
        return cls(**payload)


def make_protocol_split(labels, queries_per_class: int, train_size: int, seed: int,
                        *, d: int = 0, name: str = "") -> DatasetMeta:
    """Sample ``queries_per_class`` queries from every class; the rest is the
    retrieval set, from which a uniform random subset of ``train_size``
    samples forms the training stream (kept in sampled order).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if queries_per_class < 0 or train_size < 0:
        raise ConfigError("queries_per_class and train_size must be >= 0")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    picks = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if members.size < queries_per_class:
            raise ConfigError(
                f"class {c} has {members.size} samples, fewer than {queries_per_class} queries"
            )
        picks.append(rng.choice(members, size=queries_per_class, replace=False))
    query = np.sort(np.concatenate(picks)) if picks else np.zeros(0, np.int64)
    mask = np.ones(labels.size, dtype=bool)
    mask[query] = False
    retrieval = np.flatnonzero(mask)
    if train_size > retrieval.size:
        raise ConfigError(f"train_size {train_size} exceeds retrieval set size {retrieval.size}")
    training = rng.choice(retrieval, size=train_size, replace=False)
    return DatasetMeta(
        name=name,
        d=int(d),
        n=int(labels.size),
        class_count=int(classes.size),
        query=query.astype(np.int64),
        retrieval=retrieval.astype(np.int64),
        training=training.astype(np.int64),
    )


def synth_clusters(class_count: int, d: int, per_class: int, separation: float, seed: int):
    """Gaussian clusters: centers uniform on a sphere of radius ``separation``,
    unit-variance isotropic noise. Samples come back in shuffled order.

    Returns ``(X, labels)`` with ``X`` of shape ``d x (class_count*per_class)``.
    """
    if class_count < 1 or d < 1 or per_class < 1 or separation < 0:
        raise ConfigError("class_count, d, per_class must be positive and separation >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((class_count, d))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(class_count), per_class)
    X = centers[labels] + rng.standard_normal((labels.size, d))
    perm = rng.permutation(labels.size)
    return X[perm].T.copy(), labels[perm].copy()


@dataclass(frozen=True)
class Normalizer:
    """Feature preprocessing fitted on training data.

    ``zero-center`` subtracts the stored mean; ``unit-norm`` rescales each
    sample to L2 norm 1 (zero samples are left alone).
    """

    mode: str = "none"
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.mode!r}; choose from {NORMALIZATIONS}")

    @classmethod
    def fit(cls, mode: str, X) -> "Normalizer":
        if mode == "zero-center":
            return cls(mode, np.asarray(X, dtype=np.float64).mean(axis=1))
        return cls(mode)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.mode == "zero-center":
            return X - self.mean[:, None]
        if self.mode == "unit-norm":
            norms = np.linalg.norm(X, axis=0)
            return X / np.where(norms > 0, norms, 1.0)
        return X

    def to_dict(self) -> dict:
        return {"mode": self.mode, "mean": None if self.mean is None else self.mean.tolist()}

    @classmethod
    def from_dict(cls, payload) -> "Normalizer":
        mean = payload.get("mean")
        return cls(payload["mode"], None if mean is None else np.asarray(mean, dtype=np.float64))


def normalize(X, mode: str, reference=None) -> np.ndarray:
    """Apply ``mode`` to ``X``; ``zero-center`` uses the mean of ``reference``
    (the training set), defaulting to ``X`` itself."""
    return Normalizer.fit(mode, X if reference is None else reference).transform(X)
