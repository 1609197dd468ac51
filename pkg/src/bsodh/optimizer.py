"""Per-stage discrete optimization.

One stage couples the streaming batch ``X_s`` (``d x n_t``) with the codes
``B_e`` (``k x m_t``) of everything seen before, minimizing

    ||B_s^T B_e - k S||^2 + sigma ||W^T X_s - B_s||^2 + lam ||W||^2

over ``W``, ``B_e`` and ``B_s`` by alternating closed-form updates.
"""
from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .codec import CODE_DTYPE, HashModel, as_codes, as_features, encode, sign
from .errors import ConfigError, NumericError, ShapeError
from .similarity import (
    BalanceFactors,
    SimilarityBlock,
    build_block,
    left_multiply,
    right_multiply_transpose,
    term_decomposition,
)


@dataclass(frozen=True)
class Hyperparams:
    """Trade-off weights and solver limits, held fixed across stages.

    Defaults are the MNIST settings: ``sigma=0.5, lam=0.6`` and balance
    factors ``(1.2, 0.2)``.
    """

    sigma: float = 0.5
    lam: float = 0.6
    factors: BalanceFactors = field(default_factory=BalanceFactors)
    max_sweeps: int = 5
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ConfigError(f"max_sweeps must be a positive integer, got {self.max_sweeps}")


class WeightSolver:
    """Cholesky factorization of ``sigma X X^T + lam I`` for one batch.

    Factorized once; :meth:`solve` can then be called for any code matrix.
    """

    def __init__(self, X_s, hp: Hyperparams):
        self.X = as_features(X_s, "X_s")
        self.sigma = hp.sigma
        d = self.X.shape[0]
        A = hp.sigma * (self.X @ self.X.T)
        A[np.diag_indices(d)] += hp.lam
        try:
            self._factor = linalg.cho_factor(A, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"weight system factorization failed: {exc}") from exc

    def solve(self, B_s) -> np.ndarray:
        B = np.asarray(B_s, dtype=np.float64)
        if B.ndim != 2 or B.shape[1] != self.X.shape[1]:
            raise ShapeError(f"B_s has shape {B.shape}, X_s has {self.X.shape[1]} samples")
        rhs = self.sigma * (self.X @ B.T)
        return linalg.cho_solve(self._factor, rhs, check_finite=False)


def solve_weights(X_s, B_s, hp: Hyperparams) -> np.ndarray:
    """Ridge solution ``W = sigma (sigma X X^T + lam I)^{-1} X B^T``."""
    return WeightSolver(X_s, hp).solve(B_s)


def solve_existing_codes(B_s, S: SimilarityBlock) -> np.ndarray:
    """Refresh the existing-set codes: ``sign(B_s S)``."""
    B_s = as_codes(B_s, "B_s")
    if B_s.shape[1] != S.rows:
        raise ShapeError(f"B_s has {B_s.shape[1]} columns, block has {S.rows} rows")
    return sign(left_multiply(B_s, S))


def compute_projection(B_e, S: SimilarityBlock, W, X_s, hp: Hyperparams) -> np.ndarray:
    """``P = k B_e S^T + sigma W^T X_s`` (``k x n_t``)."""
    B_e = as_codes(B_e, "B_e")
    X_s = as_features(X_s, "X_s")
    W = np.asarray(W, dtype=np.float64)
    k = B_e.shape[0]
    if W.shape != (X_s.shape[0], k):
        raise ShapeError(f"W has shape {W.shape}, expected {(X_s.shape[0], k)}")
    if X_s.shape[1] != S.rows:
        raise ShapeError(f"X_s has {X_s.shape[1]} samples, block has {S.rows} rows")
    P = k * right_multiply_transpose(B_e, S)
    if hp.sigma:
        P += hp.sigma * (W.T @ X_s)
    return P


def _row_cross_term(r, B_s, B_e):
    others = np.arange(B_s.shape[0]) != r
    Be = B_e.astype(np.int64)
    return (Be[r] @ Be[others].T) @ B_s[others].astype(np.int64)


def update_stream_row(r: int, B_s, B_e, P) -> np.ndarray:
    """Closed-form minimizer of row ``r`` of ``B_s`` with the other rows fixed.

    Returns ``sign(P[r] - b_er B~_e^T B~_s)`` where ``b_er`` is row ``r`` of
    ``B_e`` and the tilde matrices drop row ``r``.
    """
    B_s = as_codes(B_s, "B_s")
    B_e = as_codes(B_e, "B_e")
    k = B_s.shape[0]
    if not 0 <= r < k:
        raise IndexError(f"row {r} out of range for k={k}")
    P = np.asarray(P, dtype=np.float64)
    return sign(P[r] - _row_cross_term(r, B_s, B_e))


def row_objective(r: int, row, B_s, B_e, P) -> float:
    """Linear objective ``(b_er B~_e^T B~_s - p_r) . row`` minimized by a row update."""
    cross = _row_cross_term(r, as_codes(B_s), as_codes(B_e))
    return float((cross - np.asarray(P, dtype=np.float64)[r]) @ np.asarray(row, dtype=np.float64))


class DCCResult(NamedTuple):
    """Output of :func:`solve_stream_codes`.

    ``sweep_changes[i]`` is the number of bits flipped in sweep ``i``.
    """

    codes: np.ndarray
    sweep_changes: list

    @property
    def sweeps(self) -> int:
        return len(self.sweep_changes)

    @property
    def converged(self) -> bool:
        return bool(self.sweep_changes) and self.sweep_changes[-1] == 0

    @property
    def updating_sweeps(self) -> Optional[int]:
        """Sweeps that changed at least one bit, if the loop converged."""
        return self.sweeps - 1 if self.converged else None


def solve_stream_codes(
    B_s_init,
    B_e,
    P,
    hp: Hyperparams,
    *,
    backend: Optional[str] = None,
    row_callback: Optional[Callable[[int, int, np.ndarray], None]] = None,
) -> DCCResult:
    """Cyclic row updates of ``B_s`` until a sweep flips no bit.

    Rows are visited in ascending order; at most ``hp.max_sweeps`` sweeps.
    ``row_callback(sweep, r, B_s)`` is called after every row update (this
    runs the pure-Python loop, which gives identical results).
    """
    B_s = np.array(as_codes(B_s_init, "B_s"), dtype=CODE_DTYPE, order="C")
    B_e = as_codes(B_e, "B_e")
    P = np.ascontiguousarray(P, dtype=np.float64)
    k, n = B_s.shape
    if B_e.shape[0] != k or P.shape != (k, n):
        raise ShapeError(f"B_s {B_s.shape}, B_e {B_e.shape}, P {P.shape} are inconsistent")
    Be = B_e.astype(np.int64)
    G = np.ascontiguousarray(Be @ Be.T)
    if row_callback is None:
        changes = _kernels.get_backend(backend).dcc_sweeps(B_s, G, P, int(hp.max_sweeps))
        return DCCResult(B_s, list(changes))

    changes = []
    for sweep in range(int(hp.max_sweeps)):
        changed = 0
        for r in range(k):
            cross = G[r] @ B_s - G[r, r] * B_s[r].astype(np.int64)
            new = np.where(P[r] - cross > 0, 1, -1).astype(CODE_DTYPE)
            changed += int(np.count_nonzero(new != B_s[r]))
            B_s[r] = new
            row_callback(sweep, r, B_s)
        changes.append(changed)
        if changed == 0:
            break
    return DCCResult(B_s, changes)


def _check_objective_shapes(B_s, B_e, W, X_s, S):
    k = B_s.shape[0]
    if B_e.shape[0] != k or B_s.shape[1] != S.rows or B_e.shape[1] != S.cols:
        raise ShapeError(f"B_s {B_s.shape}, B_e {B_e.shape} incompatible with block {S.rows}x{S.cols}")
    if W.shape != (X_s.shape[0], k) or X_s.shape[1] != S.rows:
        raise ShapeError(f"W {W.shape} / X_s {X_s.shape} inconsistent with codes")


def stream_objective(B_s, B_e, W, X_s, S: SimilarityBlock, hp: Hyperparams) -> float:
    """``||B_s^T B_e - k S||^2 + sigma ||W^T X_s - B_s||^2`` (the B_s sub-problem)."""
    B_s = as_codes(B_s, "B_s")
    B_e = as_codes(B_e, "B_e")
    X_s = as_features(X_s, "X_s")
    W = np.asarray(W, dtype=np.float64)
    _check_objective_shapes(B_s, B_e, W, X_s, S)
    similar, dissimilar = term_decomposition(B_s, B_e, S)
    fit = float(np.sum((W.T @ X_s - B_s) ** 2)) if hp.sigma else 0.0
    return similar + dissimilar + hp.sigma * fit


def objective_value(B_s, B_e, W, X_s, S: SimilarityBlock, hp: Hyperparams) -> float:
    """Full stage objective, including the ``lam ||W||^2`` regularizer."""
    W = np.asarray(W, dtype=np.float64)
    return stream_objective(B_s, B_e, W, X_s, S, hp) + hp.lam * float(np.sum(W * W))


@dataclass(frozen=True)
class StageInput:
    X_s: np.ndarray
    labels_s: np.ndarray
    B_e: np.ndarray
    labels_e: np.ndarray


class DCCContext(NamedTuple):
    """Fixed quantities of one stage's B_s sweeps, passed to row callbacks."""

    X_s: np.ndarray
    B_e: np.ndarray
    W: np.ndarray
    block: SimilarityBlock
    P: np.ndarray
    hp: Hyperparams
    B_s_init: np.ndarray


@dataclass(frozen=True)
class StageResult:
    """Everything one stage produces.

    ``model`` carries the weights handed to the next stage. ``dcc_weights``
    are the weights that entered the projection ``P`` during the B_s sweeps;
    they equal ``model.weights`` when ``refit_weights`` is off.
    """

    model: HashModel
    B_s: np.ndarray
    B_e: np.ndarray
    B_s_init: np.ndarray
    dcc_weights: np.ndarray
    dcc: DCCResult
    block: SimilarityBlock
    objective: float
    seconds: float


def solve_stage(
    inp: StageInput,
    model: HashModel,
    hp: Hyperparams,
    *,
    refit_weights: bool = True,
    backend: Optional[str] = None,
    row_callback=None,
) -> StageResult:
    """One online stage for ``t >= 2``.

    Order: build the balanced similarity, initialize ``B_s = sign(W^T X_s)``,
    solve ``W`` against that initialization, refresh ``B_e = sign(B_s S)``,
    then run the cyclic ``B_s`` sweeps. With ``refit_weights`` (default) the
    weights are solved once more against the optimized ``B_s``, reusing the
    same factorization; without it the returned weights never see the
    optimized codes.

    ``row_callback(ctx, sweep, r, B_s)`` receives a :class:`DCCContext`
    after every row update.
    """
    t0 = time.perf_counter()
    X_s = as_features(inp.X_s, "X_s")
    B_e_old = as_codes(inp.B_e, "B_e")
    if B_e_old.shape[1] == 0:
        raise ConfigError("solve_stage needs a non-empty existing set (stage >= 2)")
    if B_e_old.shape[0] != model.code_length:
        raise ShapeError(f"B_e has {B_e_old.shape[0]} bits, model has {model.code_length}")
    if len(inp.labels_s) != X_s.shape[1] or len(inp.labels_e) != B_e_old.shape[1]:
        raise ShapeError("label counts do not match the batch / existing set")

    S = build_block(inp.labels_s, inp.labels_e, hp.factors)
    B_s0 = encode(model, X_s)
    solver = WeightSolver(X_s, hp)
    W = solver.solve(B_s0)
    B_e = solve_existing_codes(B_s0, S)
    P = compute_projection(B_e, S, W, X_s, hp)
    callback = None
    if row_callback is not None:
        ctx = DCCContext(X_s, B_e, W, S, P, hp, B_s0)
        callback = functools.partial(row_callback, ctx)
    dcc = solve_stream_codes(B_s0, B_e, P, hp, backend=backend, row_callback=callback)
    W_out = solver.solve(dcc.codes) if refit_weights else W
    objective = objective_value(dcc.codes, B_e, W_out, X_s, S, hp)
    return StageResult(
        model=model.with_weights(W_out, stage=model.stage + 1),
        B_s=dcc.codes,
        B_e=B_e,
        B_s_init=B_s0,
        dcc_weights=W,
        dcc=dcc,
        block=S,
        objective=objective,
        seconds=time.perf_counter() - t0,
    )
