"""Hamming ranking and retrieval metrics.

Ranking sorts the database by Hamming distance to the query, ties broken by
ascending database index. Relevance is exact label equality.

Average precision is non-interpolated: the mean of precision@p over the
positions ``p`` of relevant items within the cutoff (the whole ranking when
no cutoff is given), and 0 when no relevant item is retrieved.
Precision@H2 counts a query whose radius-2 Hamming ball is empty as 0.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .codec import as_codes
from .errors import ConfigError, ShapeError
from .similarity import as_labels

# Upper bound on the bytes of one (queries x database) distance block.
_BLOCK_BYTES = 64 << 20


def hamming_distance(a, b) -> int:
    """Number of positions where two +/-1 code vectors differ."""
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    b = np.asarray(b, dtype=np.int64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"code lengths differ: {a.size} vs {b.size}")
    return int((a.size - a @ b) // 2)


def hamming_matrix(Bq, Bd, backend=None) -> np.ndarray:
    """``q x n`` int32 distances between query codes and database codes."""
    Bq = as_codes(Bq, "query codes")
    Bd = as_codes(Bd, "database codes")
    if Bq.shape[0] != Bd.shape[0]:
        raise ShapeError(f"code lengths differ: {Bq.shape[0]} vs {Bd.shape[0]}")
    kern = _kernels.get_backend(backend)
    return kern.hamming_matrix(_kernels.pack_codes(Bq), _kernels.pack_codes(Bd))


def rank_database(query, db, backend=None) -> np.ndarray:
    """Database indices sorted by (Hamming distance, index)."""
    q = as_codes(np.asarray(query).reshape(-1, 1), "query")
    db = as_codes(db, "database codes")
    dist = hamming_matrix(q, db, backend)[0]
    return _kernels.get_backend(backend).rank_by_distance(np.ascontiguousarray(dist), db.shape[0])


def average_precision(ranking, relevant, cutoff: Optional[int] = None) -> float:
    """Non-interpolated AP of a ranked list.

    ``relevant`` is either a boolean array indexed by database index or a
    predicate ``relevant(index) -> bool``.
    """
    ranking = np.asarray(ranking)
    if ranking.size == 0:
        raise ConfigError("average_precision needs at least one database item")
    if callable(relevant):
        rel = np.fromiter((bool(relevant(int(i))) for i in ranking), dtype=bool, count=ranking.size)
    else:
        rel = np.asarray(relevant, dtype=bool)[ranking]
    if cutoff is not None:
        rel = rel[:cutoff]
    hits = 0
    total = 0.0
    for p, r in enumerate(rel.tolist(), start=1):
        if r:
            hits += 1
            total += hits / p
    return total / hits if hits else 0.0


@dataclass(frozen=True)
class RetrievalSetup:
    query_codes: np.ndarray
    db_codes: np.ndarray
    query_labels: np.ndarray
    db_labels: np.ndarray

    def __post_init__(self):
        qc = as_codes(self.query_codes, "query codes")
        dc = as_codes(self.db_codes, "database codes")
        ql = as_labels(self.query_labels, "query labels")
        dl = as_labels(self.db_labels, "database labels")
        if qc.shape[0] != dc.shape[0]:
            raise ShapeError(f"query codes have {qc.shape[0]} bits, database {dc.shape[0]}")
        if ql.size != qc.shape[1] or dl.size != dc.shape[1]:
            raise ShapeError("label counts do not match code counts")
        object.__setattr__(self, "query_codes", qc)
        object.__setattr__(self, "db_codes", dc)
        object.__setattr__(self, "query_labels", ql)
        object.__setattr__(self, "db_labels", dl)

    @property
    def bits(self) -> int:
        return self.query_codes.shape[0]

    @property
    def n_queries(self) -> int:
        return self.query_codes.shape[1]

    @property
    def n_db(self) -> int:
        return self.db_codes.shape[1]


@dataclass
class MetricsReport:
    bits: int
    n_queries: int
    n_db: int
    map: float
    map_cutoff: Optional[int]
    precision_at_R: list
    precision_at_H2: float
    per_query_ap: list
    h2_empty_queries: int = 0
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def map_label(self) -> str:
        return "mAP" if self.map_cutoff is None else f"mAP@{self.map_cutoff:,}"

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "n_queries": self.n_queries,
            "n_db": self.n_db,
            "map_label": self.map_label,
            "map": self.map,
            "map_cutoff": self.map_cutoff,
            "precision_at_R": [[int(r), float(v)] for r, v in self.precision_at_R],
            "precision_at_H2": self.precision_at_H2,
            "h2_empty_queries": self.h2_empty_queries,
            "per_query_ap": [float(v) for v in self.per_query_ap],
            "conventions": self.conventions,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        """Flat ``metric,param,value`` rows (``param`` is R or the bit count)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "param", "value"])
            w.writerow([self.map_label, self.bits, repr(self.map)])
            w.writerow(["Precision@H2", self.bits, repr(self.precision_at_H2)])
            for r, v in self.precision_at_R:
                w.writerow(["Precision@R", int(r), repr(float(v))])


CONVENTIONS = {
    "ranking": "ascending Hamming distance, ties by ascending database index",
    "relevance": "exact label equality",
    "average_precision": "non-interpolated; normalized by relevant items retrieved within the cutoff; 0 if none",
    "precision_at_H2": "radius-2 Hamming ball; empty ball scores 0",
}


def _query_blocks(setup: RetrievalSetup):
    step = max(1, _BLOCK_BYTES // (4 * max(1, setup.n_db)))
    for lo in range(0, setup.n_queries, step):
        yield lo, min(lo + step, setup.n_queries)


def _ranked(setup: RetrievalSetup, cutoff, rs, radius, backend):
    if setup.n_queries < 1:
        raise ConfigError("at least one query is required")
    if setup.n_db < 1:
        raise ConfigError("the database is empty")
    kern = _kernels.get_backend(backend)
    packed_db = _kernels.pack_codes(setup.db_codes)
    rs = np.ascontiguousarray(rs, dtype=np.int64)
    parts = []
    for lo, hi in _query_blocks(setup):
        packed_q = _kernels.pack_codes(setup.query_codes[:, lo:hi])
        dist = kern.hamming_matrix(packed_q, packed_db)
        parts.append(
            kern.ranked_metrics(
                dist,
                np.ascontiguousarray(setup.query_labels[lo:hi]),
                np.ascontiguousarray(setup.db_labels),
                setup.bits,
                0 if cutoff is None else int(cutoff),
                rs,
                radius,
            )
        )
    return tuple(np.concatenate(p) for p in zip(*parts))


def mean_average_precision(setup: RetrievalSetup, cutoff: Optional[int] = None, backend=None) -> float:
    if cutoff is not None and cutoff < 1:
        raise ConfigError(f"cutoff must be >= 1, got {cutoff}")
    ap, *_ = _ranked(setup, cutoff, [], 2, backend)
    return float(ap.mean())


def precision_at_R(setup: RetrievalSetup, R: int, backend=None) -> float:
    if R < 1 or R > setup.n_db:
        raise ConfigError(f"R must be in [1, {setup.n_db}], got {R}")
    _, prec, _, _ = _ranked(setup, None, [R], 2, backend)
    return float(prec[:, 0].mean())


def precision_at_H2(setup: RetrievalSetup, radius: int = 2, backend=None) -> float:
    _, _, ball, _ = _ranked(setup, None, [], radius, backend)
    return float(ball.mean())


def evaluate(
    setup: RetrievalSetup,
    map_cutoff: Optional[int] = None,
    R_values: Sequence[int] = tuple(range(1, 101)),
    backend=None,
) -> MetricsReport:
    """All metrics in one pass over the query set."""
    rs = sorted({int(r) for r in R_values if 1 <= int(r) <= setup.n_db})
    if map_cutoff is not None and map_cutoff < 1:
        raise ConfigError(f"map cutoff must be >= 1, got {map_cutoff}")
    ap, prec, ball, ball_size = _ranked(setup, map_cutoff, rs, 2, backend)
    return MetricsReport(
        bits=setup.bits,
        n_queries=setup.n_queries,
        n_db=setup.n_db,
        map=float(ap.mean()),
        map_cutoff=map_cutoff,
        precision_at_R=[(r, float(v)) for r, v in zip(rs, prec.mean(axis=0))],
        precision_at_H2=float(ball.mean()),
        per_query_ap=ap.tolist(),
        h2_empty_queries=int(np.count_nonzero(ball_size == 0)),
    )


@dataclass(frozen=True)
class CodeDiagnostics:
    """Collapse indicators for a code matrix.

    ``duplicate_histogram[c]`` is the number of distinct codes shared by
    exactly ``c`` samples.
    """

    distinct: int
    bit_means: np.ndarray
    duplicate_histogram: dict

    @property
    def largest_group(self) -> int:
        return max(self.duplicate_histogram, default=0)


def code_diagnostics(codes) -> CodeDiagnostics:
    B = as_codes(codes, "codes")
    if B.shape[1] == 0:
        return CodeDiagnostics(0, np.zeros(B.shape[0]), {})
    _, counts = np.unique(np.ascontiguousarray(B.T), axis=0, return_counts=True)
    return CodeDiagnostics(
        distinct=int(counts.size),
        bit_means=B.mean(axis=1, dtype=np.float64),
        duplicate_histogram=dict(sorted(Counter(counts.tolist()).items())),
    )
