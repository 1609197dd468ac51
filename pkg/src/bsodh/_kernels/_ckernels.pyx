# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Signatures and results match ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, int32_t, int64_t, uint64_t

cnp.import_array()

BACKEND = "cython"


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def hamming_matrix(const uint64_t[:, ::1] pq, const uint64_t[:, ::1] pd):
    """Hamming distances between packed query rows and packed database rows."""
    cdef Py_ssize_t q = pq.shape[0], n = pd.shape[0], w = pq.shape[1]
    cdef Py_ssize_t a, b, t
    cdef int32_t acc
    out = np.empty((q, n), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    with nogil:
        for a in range(q):
            for b in range(n):
                acc = 0
                for t in range(w):
                    acc += __builtin_popcountll(pq[a, t] ^ pd[b, t])
                o[a, b] = acc
    return out


cdef void _counting_order(const int32_t[::1] dist, int k, int64_t[::1] counts,
                          int64_t[::1] order) noexcept nogil:
    cdef Py_ssize_t n = dist.shape[0], i
    cdef int v
    cdef int64_t s = 0, c
    for v in range(k + 1):
        counts[v] = 0
    for i in range(n):
        counts[dist[i]] += 1
    for v in range(k + 1):
        c = counts[v]
        counts[v] = s
        s += c
    for i in range(n):
        v = dist[i]
        order[counts[v]] = i
        counts[v] += 1


def rank_by_distance(const int32_t[::1] dist, int k):
    """Stable ascending order of ``dist`` (values in ``[0, k]``)."""
    order = np.empty(dist.shape[0], dtype=np.int64)
    counts = np.empty(k + 1, dtype=np.int64)
    cdef int64_t[::1] o = order
    cdef int64_t[::1] c = counts
    with nogil:
        _counting_order(dist, k, c, o)
    return order


def ranked_metrics(const int32_t[:, ::1] dist, const int64_t[::1] qlabels,
                   const int64_t[::1] dblabels, int k, Py_ssize_t cutoff,
                   const int64_t[::1] rs, int radius):
    """Per-query AP, precision at each R in ``rs`` and Hamming-ball precision.

    Returns ``(ap, prec_at, ball_prec, ball_size)``.
    """
    cdef Py_ssize_t q = dist.shape[0], n = dist.shape[1], nr = rs.shape[0]
    cdef Py_ssize_t a, p, j, limit, ri
    cdef int64_t hits, ball, ball_hits, lab
    cdef double ap_sum
    limit = n if cutoff <= 0 or cutoff > n else cutoff
    ap = np.zeros(q, dtype=np.float64)
    prec_at = np.zeros((q, nr), dtype=np.float64)
    ball_prec = np.zeros(q, dtype=np.float64)
    ball_size = np.zeros(q, dtype=np.int64)
    cdef double[::1] ap_v = ap
    cdef double[:, ::1] pr_v = prec_at
    cdef double[::1] bp_v = ball_prec
    cdef int64_t[::1] bs_v = ball_size
    order = np.empty(n, dtype=np.int64)
    counts = np.empty(k + 1, dtype=np.int64)
    cdef int64_t[::1] o = order
    cdef int64_t[::1] c = counts
    with nogil:
        for a in range(q):
            _counting_order(dist[a], k, c, o)
            lab = qlabels[a]
            hits = 0
            ap_sum = 0.0
            ri = 0
            for p in range(n):
                j = o[p]
                if dblabels[j] == lab:
                    hits += 1
                    if p < limit:
                        ap_sum += <double>hits / <double>(p + 1)
                if p + 1 == limit:
                    ap_v[a] = ap_sum / hits if hits > 0 else 0.0
                while ri < nr and rs[ri] == p + 1:
                    pr_v[a, ri] = <double>hits / <double>rs[ri]
                    ri += 1
            ball = 0
            ball_hits = 0
            for j in range(n):
                if dist[a, j] <= radius:
                    ball += 1
                    if dblabels[j] == lab:
                        ball_hits += 1
            bs_v[a] = ball
            bp_v[a] = <double>ball_hits / <double>ball if ball > 0 else 0.0
    return ap, prec_at, ball_prec, ball_size


def dcc_sweeps(int8_t[:, ::1] Bs, const int64_t[:, ::1] G, const double[:, ::1] P,
               int max_sweeps):
    """Row-wise discrete coordinate descent, updating ``Bs`` in place.

    Row ``r`` becomes ``sign(P[r] - sum_{j != r} G[r, j] * Bs[j])``. Sweeps
    stop after one that changes nothing or after ``max_sweeps``. Returns the
    list of per-sweep change counts.
    """
    cdef Py_ssize_t k = Bs.shape[0], n = Bs.shape[1]
    cdef Py_ssize_t r, i, j
    cdef int sweep
    cdef int64_t acc, changed
    cdef int8_t new
    changes = []
    for sweep in range(max_sweeps):
        changed = 0
        with nogil:
            for r in range(k):
                for i in range(n):
                    acc = 0
                    for j in range(k):
                        if j != r:
                            acc += G[r, j] * Bs[j, i]
                    new = 1 if P[r, i] - <double>acc > 0 else -1
                    if new != Bs[r, i]:
                        Bs[r, i] = new
                        changed += 1
        changes.append(changed)
        if changed == 0:
            break
    return changes
