"""Numpy implementations of the hot kernels.

Same signatures and bitwise-identical results as the compiled module.
"""
import numpy as np

BACKEND = "python"

_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int32)


def hamming_matrix(pq, pd):
    q, n = pq.shape[0], pd.shape[0]
    out = np.zeros((q, n), dtype=np.int32)
    pq8 = np.ascontiguousarray(pq).view(np.uint8)
    pd8 = np.ascontiguousarray(pd).view(np.uint8)
    # Row blocks keep the (rows x n x bytes) temporary small.
    step = max(1, (1 << 22) // max(1, n * pd8.shape[1]))
    for lo in range(0, q, step):
        x = pq8[lo : lo + step, None, :] ^ pd8[None, :, :]
        out[lo : lo + step] = _POPCOUNT8[x].sum(axis=2)
    return out


def rank_by_distance(dist, k):
    return np.argsort(np.asarray(dist), kind="stable").astype(np.int64)


def ranked_metrics(dist, qlabels, dblabels, k, cutoff, rs, radius):
    dist = np.asarray(dist)
    q, n = dist.shape
    limit = n if cutoff <= 0 or cutoff > n else cutoff
    rs = np.asarray(rs, dtype=np.int64)
    ap = np.zeros(q)
    prec_at = np.zeros((q, rs.size))
    ball_prec = np.zeros(q)
    ball_size = np.zeros(q, dtype=np.int64)
    positions = np.arange(1, n + 1, dtype=np.float64)
    for a in range(q):
        order = np.argsort(dist[a], kind="stable")
        rel = dblabels[order] == qlabels[a]
        hits = np.cumsum(rel)
        top = rel[:limit]
        n_hit = int(hits[limit - 1]) if limit else 0
        if n_hit:
            # Sequential sum to match the compiled kernel bit for bit.
            terms = hits[:limit][top] / positions[:limit][top]
            s = 0.0
            for t in terms.tolist():
                s += t
            ap[a] = s / n_hit
        if rs.size:
            prec_at[a] = hits[rs - 1] / rs
        ball = dist[a] <= radius
        size = int(ball.sum())
        ball_size[a] = size
        if size:
            ball_prec[a] = np.count_nonzero(dblabels[ball] == qlabels[a]) / size
    return ap, prec_at, ball_prec, ball_size


def dcc_sweeps(Bs, G, P, max_sweeps):
    k = Bs.shape[0]
    changes = []
    for _ in range(max_sweeps):
        changed = 0
        for r in range(k):
            cross = G[r] @ Bs - G[r, r] * Bs[r].astype(np.int64)
            new = np.where(P[r] - cross > 0, 1, -1).astype(Bs.dtype)
            changed += int(np.count_nonzero(new != Bs[r]))
            Bs[r] = new
        changes.append(changed)
        if changed == 0:
            break
    return changes
