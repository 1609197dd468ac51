import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsodh.errors import ConfigError, InvalidInputError
from bsodh.similarity import (
    BalanceFactors,
    build_block,
    left_multiply,
    right_multiply_transpose,
    term_decomposition,
)

from conftest import random_codes


def dense_oracle(ls, le, eta_s, eta_d):
    same = np.asarray(ls)[:, None] == np.asarray(le)[None, :]
    return np.where(same, eta_s, -eta_d)


def test_block_values():
    S = build_block([0, 1, 1], [1, 0, 2, 1], BalanceFactors(1.2, 0.2))
    np.testing.assert_allclose(S.to_dense(), dense_oracle([0, 1, 1], [1, 0, 2, 1], 1.2, 0.2))
    assert S.n_similar == 5 and S.n_dissimilar == 7
    np.testing.assert_array_equal(S.similar_pairs(1), [0, 3])
    assert S.similar_fraction == pytest.approx(5 / 12)


def test_factor_validation():
    with pytest.raises(ConfigError):
        BalanceFactors(0.0, 0.2)
    with pytest.raises(ConfigError):
        BalanceFactors(1.0, -0.1)
    BalanceFactors(1.0, 0.0)


def test_negative_labels_rejected():
    with pytest.raises(InvalidInputError):
        build_block([0, -1], [0], BalanceFactors())


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 15), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_products_match_dense(n, m, classes, k, seed):
    rng = np.random.default_rng(seed)
    ls, le = rng.integers(0, classes, n), rng.integers(0, classes, m)
    f = BalanceFactors(1.2, 0.2)
    S = build_block(ls, le, f)
    D = dense_oracle(ls, le, 1.2, 0.2)
    Bs, Be = random_codes(rng, k, n), random_codes(rng, k, m)
    np.testing.assert_allclose(left_multiply(Bs, S), Bs @ D, atol=1e-10)
    np.testing.assert_allclose(right_multiply_transpose(Be, S), Be @ D.T, atol=1e-10)
    sim, dis = term_decomposition(Bs, Be, S)
    R = (Bs.T.astype(float) @ Be - k * D) ** 2
    assert sim == pytest.approx(R[D > 0].sum(), rel=1e-10, abs=1e-9)
    assert dis == pytest.approx(R[D < 0].sum(), rel=1e-10, abs=1e-9)
