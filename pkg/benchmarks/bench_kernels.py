"""Time the compiled and pure-Python kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from bsodh._kernels import available_backends, get_backend, pack_codes


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def codes(rng, k, n):
    return np.where(rng.random((k, n)) < 0.5, -1, 1).astype(np.int8)


def cases(rng):
    k = 64
    q, n = 200, 20000
    pq, pd = pack_codes(codes(rng, k, q)), pack_codes(codes(rng, k, n))
    ql, dl = rng.integers(0, 10, q), rng.integers(0, 10, n)
    rs = np.arange(1, 101, dtype=np.int64)
    yield f"hamming {q}x{n}, k={k}", lambda kern: kern.hamming_matrix(pq, pd)
    dist = get_backend("python").hamming_matrix(pq, pd)
    yield f"ranked metrics {q}x{n}", lambda kern: kern.ranked_metrics(dist, ql, dl, k, 0, rs, 2)

    k, n_t, m = 64, 1000, 19000
    Be = codes(rng, k, m).astype(np.int64)
    G = np.ascontiguousarray(Be @ Be.T)
    P = rng.normal(scale=1e4, size=(k, n_t))
    B0 = codes(rng, k, n_t)
    yield f"B_s sweeps k={k}, n_t={n_t} (5 max)", lambda kern: kern.dcc_sweeps(B0.copy(order="C"), G, P, 5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<40}" + "".join(f"{b:>12}" for b in backends) + ("    speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng):
        t = [best_of(lambda: fn(get_backend(b)), args.repeat) for b in backends]
        line = f"{name:<40}" + "".join(f"{x * 1e3:>10.1f}ms" for x in t)
        if len(t) > 1:
            line += f"{t[1] / t[0]:>10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
