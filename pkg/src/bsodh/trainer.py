"""The online training loop and the code-dump file format."""
from __future__ import annotations

import functools
import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .codec import HashModel, as_codes, as_features, encode, init_weights, save_model
from .data import Normalizer
from .errors import ConfigError, FormatError, ShapeError
from .optimizer import Hyperparams, StageInput, StageResult, solve_stage
from .similarity import as_labels

log = logging.getLogger(__name__)

CODES_MAGIC = b"BSODC1"
_CODES_HEADER = struct.Struct("<6sII")


def save_codes(path, B) -> None:
    """Write a ``BSODC1`` dump: magic, k (u32), n (u32), then int8 values
    column-major (each sample's ``k`` bits contiguous)."""
    B = as_codes(B)
    k, n = B.shape
    payload = _CODES_HEADER.pack(CODES_MAGIC, k, n) + np.ascontiguousarray(B.T, dtype=np.int8).tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def load_codes(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CODES_HEADER.size:
        raise FormatError("truncated BSODC1 header", path, len(raw))
    magic, k, n = _CODES_HEADER.unpack_from(raw, 0)
    if magic != CODES_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CODES_MAGIC!r}", path, 0)
    expected = _CODES_HEADER.size + k * n
    if len(raw) != expected:
        raise FormatError(f"payload size {len(raw)} does not match k={k}, n={n}", path, min(len(raw), expected))
    vals = np.frombuffer(raw, dtype=np.int8, offset=_CODES_HEADER.size).reshape(n, k).T
    bad = np.flatnonzero((vals != 1) & (vals != -1))
    if bad.size:
        raise FormatError("code value outside {-1, +1}", path, _CODES_HEADER.size + int(bad[0]))
    return np.ascontiguousarray(vals)


@dataclass(frozen=True)
class TrainerConfig:
    """Online training settings.

    ``total_batches=None`` consumes the whole stream. ``refit_weights``
    solves the weights once more after the B_s sweeps of every stage (see
    :func:`bsodh.optimizer.solve_stage`).
    """

    bits: int = 32
    batch_size: int = 1000
    total_batches: Optional[int] = None
    hp: Hyperparams = field(default_factory=Hyperparams)
    normalization: str = "none"
    checkpoint_every: Optional[int] = None
    checkpoint_dir: Optional[str] = None
    refit_weights: bool = True
    backend: Optional[str] = None

    def __post_init__(self):
        if self.bits < 1:
            raise ConfigError(f"bits must be >= 1, got {self.bits}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_batches is not None and self.total_batches < 1:
            raise ConfigError(f"total_batches must be >= 1, got {self.total_batches}")
        if self.checkpoint_every is not None and (self.checkpoint_every < 1 or not self.checkpoint_dir):
            raise ConfigError("checkpoint_every needs a positive interval and a checkpoint_dir")
        Normalizer(self.normalization)


@dataclass(frozen=True)
class TrainingState:
    model: HashModel
    X_e: np.ndarray
    labels_e: np.ndarray
    B_e: np.ndarray
    stage: int = 0

    @property
    def size(self) -> int:
        return self.X_e.shape[1]

    @classmethod
    def empty(cls, model: HashModel) -> "TrainingState":
        k = model.code_length
        return cls(
            model=model,
            X_e=np.zeros((model.dim, 0)),
            labels_e=np.zeros(0, dtype=np.int64),
            B_e=np.zeros((k, 0), dtype=np.int8),
            stage=0,
        )


def append_batch(state: TrainingState, X_s, labels_s, B_s, B_e_updated=None,
                 model: Optional[HashModel] = None) -> TrainingState:
    """Grow the existing set by one batch.

    ``B_e_updated`` (the stage's refreshed existing codes) replaces the old
    ``B_e`` before ``B_s`` is appended; ``None`` keeps the old codes.
    """
    X_s = as_features(X_s, "X_s")
    labels_s = as_labels(labels_s, "labels_s")
    B_s = as_codes(B_s, "B_s")
    B_e = state.B_e if B_e_updated is None else as_codes(B_e_updated, "B_e")
    if X_s.shape[0] != state.X_e.shape[0]:
        raise ShapeError(f"batch dimension {X_s.shape[0]} != existing dimension {state.X_e.shape[0]}")
    if labels_s.size != X_s.shape[1] or B_s.shape[1] != X_s.shape[1]:
        raise ShapeError("batch features, labels and codes disagree on the sample count")
    if B_e.shape != state.B_e.shape or B_s.shape[0] != B_e.shape[0]:
        raise ShapeError(f"refreshed B_e {B_e.shape} / B_s {B_s.shape} incompatible with {state.B_e.shape}")
    return TrainingState(
        model=state.model if model is None else model,
        X_e=np.concatenate([state.X_e, X_s], axis=1),
        labels_e=np.concatenate([state.labels_e, labels_s]),
        B_e=np.concatenate([B_e, B_s], axis=1),
        stage=state.stage + 1,
    )


def finalize_encode(state: TrainingState) -> np.ndarray:
    """Codes of every accumulated sample under the current weights."""
    if state.stage < 1:
        raise ConfigError("no batch has been consumed yet")
    return encode(state.model, state.X_e)


@dataclass(frozen=True)
class StageLog:
    stage: int
    batch_size: int
    existing_size: int
    objective: float
    sweeps: int
    updating_sweeps: Optional[int]
    converged: bool
    seconds: float

    def line(self) -> str:
        obj = "nan" if math.isnan(self.objective) else f"{self.objective:.6e}"
        upd = "-" if self.updating_sweeps is None else str(self.updating_sweeps)
        return (
            f"stage={self.stage} n_t={self.batch_size} m_t={self.existing_size} objective={obj} "
            f"sweeps={self.sweeps} updating_sweeps={upd} converged={int(self.converged)} "
            f"seconds={self.seconds:.4f}"
        )


@dataclass
class TrainResult:
    """Output of :func:`run_online`.

    ``codes`` are ``sign(W^T X)`` over all training data with the final
    weights; ``state.B_e`` holds the codes accumulated during training and
    ``last_stage.B_e`` the existing-set codes refreshed in the final stage.
    """

    model: HashModel
    codes: np.ndarray
    state: TrainingState
    stages: list
    normalizer: Normalizer
    last_stage: Optional[StageResult] = None


def batches(X, labels, batch_size: int):
    """Chunk ``X`` (``d x n``) and ``labels`` into consecutive batches."""
    X = np.asarray(X)
    labels = np.asarray(labels)
    for lo in range(0, X.shape[1], batch_size):
        yield X[:, lo : lo + batch_size], labels[lo : lo + batch_size]


def run_online(
    stream: Iterable,
    cfg: TrainerConfig,
    *,
    on_stage: Optional[Callable[[StageLog], None]] = None,
    row_callback=None,
) -> TrainResult:
    """Consume ``(X_s, labels_s)`` batches and learn the hash functions.

    Stage 1 draws Gaussian weights and codes the batch with them. Every later
    stage runs :func:`bsodh.optimizer.solve_stage` against the accumulated
    set, whose codes are refreshed before the new batch is appended. The
    result holds the final weights and the codes of all training data under
    them.

    ``row_callback(stage_result_context, sweep, r, B_s)`` is forwarded to the
    B_s sweeps of each stage (see :func:`bsodh.optimizer.solve_stage`).
    """
    hp = cfg.hp
    state = None
    normalizer = None
    logs = []
    last = None
    for t, (X_s, labels_s) in enumerate(stream, start=1):
        if cfg.total_batches is not None and t > cfg.total_batches:
            break
        X_s = as_features(X_s, "X_s")
        labels_s = as_labels(labels_s, "labels_s")
        if labels_s.size != X_s.shape[1]:
            raise ShapeError(f"stage {t}: {X_s.shape[1]} samples but {labels_s.size} labels")
        if normalizer is None:
            # zero-center can only use what the stream has shown so far.
            normalizer = Normalizer.fit(cfg.normalization, X_s)
        X_s = normalizer.transform(X_s)
        t0 = time.perf_counter()
        if state is None:
            model = init_weights(X_s.shape[0], cfg.bits, hp.seed)
            state = TrainingState.empty(model)
            B_s = encode(model, X_s)
            state = append_batch(state, X_s, labels_s, B_s, model=model.with_weights(model.weights, stage=1))
            entry = StageLog(t, X_s.shape[1], 0, math.nan, 0, None, True, time.perf_counter() - t0)
        else:
            if X_s.shape[0] != state.model.dim:
                raise ShapeError(f"stage {t}: batch dimension {X_s.shape[0]} != {state.model.dim}")
            callback = None if row_callback is None else functools.partial(row_callback, t)
            res = solve_stage(
                StageInput(X_s, labels_s, state.B_e, state.labels_e),
                state.model,
                hp,
                refit_weights=cfg.refit_weights,
                backend=cfg.backend,
                row_callback=callback,
            )
            m_t = state.size
            state = append_batch(state, X_s, labels_s, res.B_s, res.B_e, model=res.model)
            last = res
            entry = StageLog(
                t, X_s.shape[1], m_t, res.objective, res.dcc.sweeps,
                res.dcc.updating_sweeps, res.dcc.converged, time.perf_counter() - t0,
            )
        logs.append(entry)
        log.info(entry.line())
        if on_stage is not None:
            on_stage(entry)
        if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            ckpt = Path(cfg.checkpoint_dir)
            ckpt.mkdir(parents=True, exist_ok=True)
            save_model(ckpt / f"stage_{t:05d}.bsodh", state.model, hp)
            save_codes(ckpt / f"stage_{t:05d}.bsodc", state.B_e)
    if state is None:
        raise ConfigError("empty stream: no batch to train on")
    if cfg.total_batches is not None and state.stage < cfg.total_batches:
        raise ConfigError(f"stream ended after {state.stage} batches, expected {cfg.total_batches}")
    return TrainResult(
        model=state.model,
        codes=finalize_encode(state),
        state=state,
        stages=logs,
        normalizer=normalizer,
        last_stage=last,
    )
