"""Hash model, sign encoder and model checkpoints.

Conventions used throughout the package:

* feature matrices are ``d x n`` float64 arrays, one sample per column;
* code matrices are ``k x n`` int8 arrays with entries in ``{-1, +1}``;
* ``sign(0) == -1``.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, FormatError, InvalidInputError, ShapeError

if TYPE_CHECKING:
    from .optimizer import Hyperparams

CODE_DTYPE = np.int8

MODEL_MAGIC = b"BSODH1"
_MODEL_HEADER = struct.Struct("<6sIII")


def as_features(X, name="X") -> np.ndarray:
    """Validate a feature matrix and return it as a 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (d x n), got shape {X.shape}")
    if X.shape[0] < 1:
        raise ShapeError(f"{name} must have d >= 1")
    if not np.isfinite(X).all():
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return X


def as_codes(B, name="B") -> np.ndarray:
    """Validate a code matrix and return it as a 2-D int8 array."""
    B = np.asarray(B)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (k x n), got shape {B.shape}")
    if B.size and not np.all((B == 1) | (B == -1)):
        raise InvalidInputError(f"{name} must contain only -1 and +1")
    return B.astype(CODE_DTYPE, copy=False)


def sign(x):
    """Elementwise sign with ``sign(0) = -1``.

    Scalars give a Python ``int``; arrays give an int8 array of the same shape.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InvalidInputError("sign() input contains NaN or Inf")
    out = np.where(arr > 0, 1, -1).astype(CODE_DTYPE)
    if out.ndim == 0:
        return int(out)
    return out


@dataclass(frozen=True)
class HashModel:
    """Linear hash functions ``B = sign(W^T X)``.

    Attributes
    ----------
    weights : ndarray, shape (d, k)
    stage : int
        Number of streaming batches consumed so far.
    """

    weights: np.ndarray
    stage: int = 0
    code_length: int = field(init=False)

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64)
        if W.ndim != 2:
            raise ShapeError(f"weights must be 2-D (d x k), got shape {W.shape}")
        if W.shape[0] < 1 or W.shape[1] < 1:
            raise ShapeError(f"weights must be at least 1 x 1, got {W.shape}")
        if not np.isfinite(W).all():
            raise InvalidInputError("weights contain NaN or Inf")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "code_length", W.shape[1])

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def with_weights(self, weights, stage=None) -> "HashModel":
        return replace(self, weights=weights, stage=self.stage if stage is None else stage)

    def encode(self, X) -> np.ndarray:
        return encode(self, X)


def encode(model: HashModel, X) -> np.ndarray:
    """Return the ``k x n`` codes ``sign(W^T X)``."""
    X = as_features(X)
    if X.shape[0] != model.dim:
        raise ShapeError(f"feature dimension {X.shape[0]} != model dimension {model.dim}")
    return sign(model.weights.T @ X)


def init_weights(d: int, k: int, seed: int) -> HashModel:
    """Draw ``W`` i.i.d. standard normal from a generator seeded with ``seed``."""
    if d < 1 or k < 1:
        raise ConfigError(f"need d >= 1 and k >= 1, got d={d}, k={k}")
    rng = np.random.default_rng(seed)
    return HashModel(rng.standard_normal((d, k)), stage=0)


def save_model(path, model: HashModel, hp: "Hyperparams") -> None:
    """Write a ``BSODH1`` checkpoint.

    Layout (little-endian): magic, d (u32), k (u32), stage (u32), the ``d*k``
    weights as float64 in row-major order, then sigma, lambda, eta_s, eta_d
    and max_sweeps as five float64 values.
    """
    d, k = model.weights.shape
    payload = bytearray(_MODEL_HEADER.pack(MODEL_MAGIC, d, k, model.stage))
    payload += np.ascontiguousarray(model.weights, dtype="<f8").tobytes(order="C")
    payload += struct.pack(
        "<5d", hp.sigma, hp.lam, hp.factors.eta_s, hp.factors.eta_d, float(hp.max_sweeps)
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(bytes(payload))
    os.replace(tmp, path)


def load_model(path) -> tuple[HashModel, "Hyperparams"]:
    """Read a ``BSODH1`` checkpoint; returns the model and its hyperparameters.

    The seed is not stored in the checkpoint and comes back as 0.
    """
    from .optimizer import Hyperparams
    from .similarity import BalanceFactors

    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError("truncated model header", path, len(raw))
    magic, d, k, stage = _MODEL_HEADER.unpack_from(raw, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", path, 0)
    n_weights = d * k
    expected = _MODEL_HEADER.size + 8 * n_weights + 40
    if len(raw) != expected:
        raise FormatError(
            f"payload size {len(raw)} does not match d={d}, k={k} (expected {expected})",
            path,
            min(len(raw), expected),
        )
    W = np.frombuffer(raw, dtype="<f8", count=n_weights, offset=_MODEL_HEADER.size)
    sigma, lam, eta_s, eta_d, max_sweeps = struct.unpack_from("<5d", raw, expected - 40)
    if not np.isfinite(W).all():
        raise FormatError("non-finite weight", path, _MODEL_HEADER.size)
    model = HashModel(W.reshape(d, k).astype(np.float64), stage=stage)
    hp = Hyperparams(
        sigma=sigma,
        lam=lam,
        factors=BalanceFactors(eta_s, eta_d),
        max_sweeps=int(max_sweeps),
    )
    return model, hp
