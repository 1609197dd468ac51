"""Label similarity between a streaming batch and the existing set.

The balanced similarity has value ``eta_s`` where the two samples share a
label and ``-eta_d`` elsewhere. Only the similar pairs are stored (as a CSR
0/1 indicator ``M``); every product goes through

    S = (eta_s + eta_d) * M - eta_d * 1 1^T

so nothing of size ``n_t x m_t`` is ever materialized outside tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConfigError, InvalidInputError, ShapeError

# Chunk size (in pairs) for the pairwise inner products in term_decomposition.
_PAIR_CHUNK = 1 << 20


@dataclass(frozen=True)
class BalanceFactors:
    """Weights of similar (``eta_s``) and dissimilar (``eta_d``) pairs.

    ``eta_s = eta_d = 1`` recovers the plain +/-1 similarity.
    """

    eta_s: float = 1.2
    eta_d: float = 0.2

    def __post_init__(self):
        if not np.isfinite(self.eta_s) or self.eta_s <= 0:
            raise ConfigError(f"eta_s must be > 0, got {self.eta_s}")
        if not np.isfinite(self.eta_d) or self.eta_d < 0:
            raise ConfigError(f"eta_d must be >= 0, got {self.eta_d}")


def as_labels(labels, name="labels") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        return arr.astype(np.int64)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            raise InvalidInputError(f"{name} must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise InvalidInputError(f"{name} must be non-negative class ids")
    return arr.astype(np.int64, copy=False)


@dataclass(frozen=True)
class SimilarityBlock:
    """Sparse ``n_t x m_t`` balanced similarity.

    ``indicator`` is a CSR matrix with a 1 at every similar pair; within each
    row the column indices are sorted.
    """

    indicator: sparse.csr_matrix
    factors: BalanceFactors

    @property
    def rows(self) -> int:
        return self.indicator.shape[0]

    @property
    def cols(self) -> int:
        return self.indicator.shape[1]

    @property
    def n_similar(self) -> int:
        return int(self.indicator.nnz)

    @property
    def n_dissimilar(self) -> int:
        return self.rows * self.cols - self.n_similar

    @property
    def similar_fraction(self) -> float:
        total = self.rows * self.cols
        return self.n_similar / total if total else 0.0

    def similar_pairs(self, i: int) -> np.ndarray:
        """Sorted column indices similar to row ``i``."""
        ptr = self.indicator.indptr
        return self.indicator.indices[ptr[i] : ptr[i + 1]]

    def to_dense(self) -> np.ndarray:
        """Materialize the block. Meant for small sizes and tests."""
        fs = self.factors
        dense = np.full((self.rows, self.cols), -fs.eta_d, dtype=np.float64)
        dense[self.indicator.toarray().astype(bool)] = fs.eta_s
        return dense


def build_block(labels_s, labels_e, factors: BalanceFactors) -> SimilarityBlock:
    """Similarity between batch labels (rows) and existing labels (columns)."""
    ls = as_labels(labels_s, "labels_s")
    le = as_labels(labels_e, "labels_e")
    n, m = ls.size, le.size
    order = np.argsort(le, kind="stable")
    sorted_labels = le[order]
    classes, starts, counts = np.unique(sorted_labels, return_index=True, return_counts=True)

    if classes.size:
        # Position of each batch label in `classes`; absent labels get count 0.
        pos = np.minimum(np.searchsorted(classes, ls), classes.size - 1)
        row_counts = np.where(classes[pos] == ls, counts[pos], 0)
    else:
        pos = np.zeros(n, dtype=np.int64)
        row_counts = np.zeros(n, dtype=np.int64)

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(row_counts, out=indptr[1:])
    if indptr[-1]:
        # Gather each row's sorted column group from the label-sorted order.
        row_of = np.repeat(np.arange(n), row_counts)
        within = np.arange(indptr[-1]) - indptr[row_of]
        indices = order[starts[pos[row_of]] + within]
    else:
        indices = np.zeros(0, dtype=np.int64)
    idx_dtype = np.int32 if max(m, indptr[-1]) < 2**31 else np.int64
    M = sparse.csr_matrix(
        (np.ones(indices.size, dtype=np.float64), indices.astype(idx_dtype), indptr.astype(idx_dtype)),
        shape=(n, m),
    )
    M.has_sorted_indices = True
    return SimilarityBlock(M, factors)


def left_multiply(B, S: SimilarityBlock) -> np.ndarray:
    """``B @ S`` for a ``k x n_t`` code matrix; result is ``k x m_t``."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != S.rows:
        raise ShapeError(f"B has shape {B.shape}, block has {S.rows} rows")
    fs = S.factors
    # (B M) computed as (M^T B^T)^T so scipy does sparse @ dense.
    BM = (S.indicator.T @ B.T).T
    out = (fs.eta_s + fs.eta_d) * np.asarray(BM)
    if fs.eta_d:
        out -= fs.eta_d * B.sum(axis=1, keepdims=True)
    return out


def right_multiply_transpose(B, S: SimilarityBlock) -> np.ndarray:
    """``B @ S.T`` for a ``k x m_t`` code matrix; result is ``k x n_t``."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != S.cols:
        raise ShapeError(f"B has shape {B.shape}, block has {S.cols} columns")
    fs = S.factors
    BMt = (S.indicator @ B.T).T
    out = (fs.eta_s + fs.eta_d) * np.asarray(BMt)
    if fs.eta_d:
        out -= fs.eta_d * B.sum(axis=1, keepdims=True)
    return out


def _pair_inner_products(B_s, B_e, S: SimilarityBlock) -> np.ndarray:
    """``b_si . b_ej`` for every similar pair, in CSR order."""
    M = S.indicator
    rows = np.repeat(np.arange(S.rows), np.diff(M.indptr))
    cols = M.indices
    out = np.empty(rows.size, dtype=np.float64)
    Bs = np.asarray(B_s, dtype=np.float64)
    Be = np.asarray(B_e, dtype=np.float64)
    for lo in range(0, rows.size, _PAIR_CHUNK):
        hi = min(lo + _PAIR_CHUNK, rows.size)
        out[lo:hi] = np.einsum("ki,ki->i", Bs[:, rows[lo:hi]], Be[:, cols[lo:hi]])
    return out


def term_decomposition(B_s, B_e, S: SimilarityBlock) -> tuple[float, float]:
    """Split ``||B_s^T B_e - k S||_F^2`` into similar and dissimilar parts.

    Returns ``(similar_term, dissimilar_term)``: the squared residuals summed
    over similar pairs (target ``k * eta_s``) and over dissimilar pairs
    (target ``-k * eta_d``). The dissimilar sum is obtained from the full
    sum over all pairs, which has the closed form

        ||B_s^T B_e||^2 + 2 k eta_d 1^T B_s^T B_e 1 + n m (k eta_d)^2,

    minus the similar-pair contributions.
    """
    Bs = np.asarray(B_s, dtype=np.float64)
    Be = np.asarray(B_e, dtype=np.float64)
    if Bs.shape[1] != S.rows or Be.shape[1] != S.cols or Bs.shape[0] != Be.shape[0]:
        raise ShapeError(f"B_s {Bs.shape}, B_e {Be.shape} incompatible with block {S.rows}x{S.cols}")
    k = Bs.shape[0]
    fs = S.factors
    td = k * fs.eta_d
    gram_norm = float(np.sum((Bs @ Bs.T) * (Be @ Be.T)))
    total_sum = float(Bs.sum(axis=1) @ Be.sum(axis=1))
    all_as_dissimilar = gram_norm + 2.0 * td * total_sum + S.rows * S.cols * td * td
    g = _pair_inner_products(Bs, Be, S)
    similar = float(np.sum((g - k * fs.eta_s) ** 2))
    dissimilar = all_as_dissimilar - float(np.sum((g + td) ** 2))
    return similar, dissimilar
