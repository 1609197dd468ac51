import numpy as np
import pytest

from bsodh import _kernels
from bsodh._kernels import available_backends, get_backend, pack_codes

from conftest import random_codes

pytestmark = pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernels not built")


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("BSODH_BACKEND", "python")
    assert get_backend().__name__.endswith("_pykernels")
    with pytest.raises(Exception):
        get_backend("fortran")


@pytest.mark.parametrize("k", [1, 7, 64, 65, 130])
def test_hamming_backends_agree(rng, k):
    Bq, Bd = random_codes(rng, k, 9), random_codes(rng, k, 40)
    pq, pd = pack_codes(Bq), pack_codes(Bd)
    c = get_backend("cython").hamming_matrix(pq, pd)
    p = get_backend("python").hamming_matrix(pq, pd)
    np.testing.assert_array_equal(c, p)
    np.testing.assert_array_equal(p, (k - Bq.T.astype(int) @ Bd) // 2)


def test_ranked_metrics_backends_agree(rng):
    k = 8
    dist = rng.integers(0, k + 1, size=(6, 50)).astype(np.int32)
    ql, dl = rng.integers(0, 3, 6), rng.integers(0, 3, 50)
    rs = np.array([1, 5, 50], dtype=np.int64)
    for cutoff in (0, 10):
        a = get_backend("cython").ranked_metrics(dist, ql, dl, k, cutoff, rs, 2)
        b = get_backend("python").ranked_metrics(dist, ql, dl, k, cutoff, rs, 2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_dcc_backends_agree(rng):
    k, n, m = 12, 30, 80
    Be = random_codes(rng, k, m).astype(np.int64)
    G = np.ascontiguousarray(Be @ Be.T)
    P = rng.normal(scale=50, size=(k, n))
    B0 = random_codes(rng, k, n)
    Bc, Bp = B0.copy(order="C"), B0.copy(order="C")
    ch_c = get_backend("cython").dcc_sweeps(Bc, G, P, 10)
    ch_p = get_backend("python").dcc_sweeps(Bp, G, P, 10)
    assert list(ch_c) == list(ch_p)
    np.testing.assert_array_equal(Bc, Bp)
