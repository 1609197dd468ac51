import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsodh.codec import HashModel, init_weights, sign
from bsodh.errors import ConfigError, ShapeError
from bsodh.optimizer import (
    Hyperparams,
    StageInput,
    compute_projection,
    objective_value,
    row_objective,
    solve_existing_codes,
    solve_stage,
    solve_stream_codes,
    solve_weights,
    stream_objective,
    update_stream_row,
)
from bsodh.similarity import BalanceFactors, build_block

from conftest import random_codes
from oracles import (
    all_sign_vectors,
    dense_similarity,
    fd_gradient,
    l1_column_loss,
    ridge_objective,
    stream_objective_dense,
)


def small_stage(rng, k=4, n=6, m=9, d=5, classes=3, factors=BalanceFactors()):
    X = rng.normal(size=(d, n))
    ls, le = rng.integers(0, classes, n), rng.integers(0, classes, m)
    B_s, B_e = random_codes(rng, k, n), random_codes(rng, k, m)
    W = rng.normal(size=(d, k))
    S = build_block(ls, le, factors)
    return X, ls, le, B_s, B_e, W, S


def test_hyperparam_validation():
    with pytest.raises(ConfigError):
        Hyperparams(sigma=-1)
    with pytest.raises(ConfigError):
        Hyperparams(lam=0)
    with pytest.raises(ConfigError):
        Hyperparams(max_sweeps=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**31))
def test_weights_zero_gradient(d, n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(d, n))
    B = random_codes(rng, k, n)
    hp = Hyperparams(sigma=0.5, lam=0.6)
    W = solve_weights(X, B, hp)
    g = fd_gradient(lambda V: ridge_objective(V, X, B, 0.5, 0.6), W)
    assert np.abs(g).max() < 1e-5


def test_weights_sigma_zero_gives_zero():
    rng = np.random.default_rng(0)
    W = solve_weights(rng.normal(size=(3, 5)), random_codes(rng, 2, 5), Hyperparams(sigma=0.0))
    assert np.all(W == 0)


def test_weights_large_lambda_shrinks():
    rng = np.random.default_rng(1)
    X, B = rng.normal(size=(3, 5)), random_codes(rng, 2, 5)
    small = np.abs(solve_weights(X, B, Hyperparams(lam=1e-3))).max()
    big = np.abs(solve_weights(X, B, Hyperparams(lam=1e6))).max()
    assert big < 1e-5 < small


def test_existing_codes_example():
    B_s = np.array([[1, -1], [1, 1]], dtype=np.int8)
    S = build_block([0, 1], [0, 1, 1], BalanceFactors(1.0, 1.0))
    # B_s S~ = [[2, -2, -2], [0, 0, 0]]; zeros map to -1
    np.testing.assert_array_equal(solve_existing_codes(B_s, S), [[1, -1, -1], [-1, -1, -1]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_existing_codes_l1_optimal(k, n, m, seed):
    rng = np.random.default_rng(seed)
    ls, le = rng.integers(0, 3, n), rng.integers(0, 3, m)
    S = build_block(ls, le, BalanceFactors(1.0, 1.0))
    D = dense_similarity(ls, le, 1.0, 1.0)
    B_s = random_codes(rng, k, n)
    B_e = solve_existing_codes(B_s, S)
    cands = all_sign_vectors(k)
    for j in range(m):
        best = min(l1_column_loss(c, B_s, D[:, j], k) for c in cands)
        assert l1_column_loss(B_e[:, j].astype(np.int64), B_s, D[:, j], k) == best


def test_projection_matches_dense(rng):
    X, ls, le, B_s, B_e, W, S = small_stage(rng)
    hp = Hyperparams()
    D = dense_similarity(ls, le, 1.2, 0.2)
    P = compute_projection(B_e, S, W, X, hp)
    np.testing.assert_allclose(P, 4 * B_e @ D.T + 0.5 * W.T @ X, atol=1e-12)


def test_row_update_minimizes_full_objective(rng):
    # The row update must minimize the stream objective over the whole row.
    for _ in range(20):
        X, ls, le, B_s, B_e, W, S = small_stage(rng, k=4, n=6)
        hp = Hyperparams()
        D = dense_similarity(ls, le, 1.2, 0.2)
        P = compute_projection(B_e, S, W, X, hp)
        r = int(rng.integers(0, 4))
        new = update_stream_row(r, B_s, B_e, P)
        cand = B_s.copy()
        values = []
        for row in all_sign_vectors(6):
            cand[r] = row
            values.append(stream_objective_dense(cand, B_e, W, X, D, 0.5))
        cand[r] = new
        assert stream_objective_dense(cand, B_e, W, X, D, 0.5) <= min(values) * (1 + 1e-12)


def test_row_update_exhaustive_linear(rng):
    for _ in range(50):
        k, n = int(rng.integers(1, 7)), int(rng.integers(1, 11))
        B_s, B_e = random_codes(rng, k, n), random_codes(rng, k, int(rng.integers(1, 12)))
        P = rng.normal(scale=5, size=(k, n))
        r = int(rng.integers(0, k))
        new = update_stream_row(r, B_s, B_e, P)
        best = min(row_objective(r, c, B_s, B_e, P) for c in all_sign_vectors(n))
        assert row_objective(r, new, B_s, B_e, P) == best


def test_row_update_bad_index(rng):
    B = random_codes(rng, 3, 4)
    with pytest.raises(IndexError):
        update_stream_row(3, B, B, np.zeros((3, 4)))


def test_stream_objective_matches_dense(rng):
    X, ls, le, B_s, B_e, W, S = small_stage(rng, k=5, n=7, m=11)
    hp = Hyperparams()
    D = dense_similarity(ls, le, 1.2, 0.2)
    assert stream_objective(B_s, B_e, W, X, S, hp) == pytest.approx(
        stream_objective_dense(B_s, B_e, W, X, D, 0.5), rel=1e-12
    )
    assert objective_value(B_s, B_e, W, X, S, hp) == pytest.approx(
        stream_objective_dense(B_s, B_e, W, X, D, 0.5) + 0.6 * np.sum(W * W), rel=1e-12
    )


def test_dcc_monotone_and_converges(rng):
    X, ls, le, B_s, B_e, W, S = small_stage(rng, k=8, n=20, m=40, d=6)
    hp = Hyperparams(max_sweeps=50)
    P = compute_projection(B_e, S, W, X, hp)
    D = dense_similarity(ls, le, 1.2, 0.2)
    trace = [stream_objective_dense(B_s, B_e, W, X, D, 0.5)]
    res = solve_stream_codes(B_s, B_e, P, hp, row_callback=lambda s, r, B: trace.append(
        stream_objective_dense(B, B_e, W, X, D, 0.5)))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))
    assert res.converged
    # fixed point: every row is already its own update
    for r in range(8):
        np.testing.assert_array_equal(update_stream_row(r, res.codes, B_e, P), res.codes[r])


def test_dcc_callback_matches_kernel(rng, backend):
    X, ls, le, B_s, B_e, W, S = small_stage(rng, k=10, n=30, m=60, d=6)
    hp = Hyperparams(max_sweeps=7)
    P = compute_projection(B_e, S, W, X, hp)
    a = solve_stream_codes(B_s, B_e, P, hp, backend=backend)
    b = solve_stream_codes(B_s, B_e, P, hp, row_callback=lambda *args: None)
    np.testing.assert_array_equal(a.codes, b.codes)
    assert a.sweep_changes == b.sweep_changes


def test_dcc_does_not_mutate_input(rng):
    B_s, B_e = random_codes(rng, 3, 5), random_codes(rng, 3, 7)
    before = B_s.copy()
    solve_stream_codes(B_s, B_e, rng.normal(size=(3, 5)), Hyperparams())
    np.testing.assert_array_equal(B_s, before)


def test_dcc_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        solve_stream_codes(random_codes(rng, 3, 5), random_codes(rng, 4, 7), np.zeros((3, 5)), Hyperparams())


def test_solve_stage_pipeline(rng):
    d, k, n, m = 6, 8, 20, 30
    X = rng.normal(size=(d, n))
    ls, le = rng.integers(0, 3, n), rng.integers(0, 3, m)
    B_e_old = random_codes(rng, k, m)
    model = init_weights(d, k, seed=2)
    hp = Hyperparams()
    res = solve_stage(StageInput(X, ls, B_e_old, le), model, hp)
    S = build_block(ls, le, hp.factors)
    B0 = sign(model.weights.T @ X)
    np.testing.assert_array_equal(res.B_s_init, B0)
    W0 = solve_weights(X, B0, hp)
    np.testing.assert_allclose(res.dcc_weights, W0, atol=1e-12)
    np.testing.assert_array_equal(res.B_e, sign(B0.astype(float) @ S.to_dense()))
    np.testing.assert_allclose(res.model.weights, solve_weights(X, res.B_s, hp), atol=1e-10)
    assert res.model.stage == model.stage + 1

    plain = solve_stage(StageInput(X, ls, B_e_old, le), model, hp, refit_weights=False)
    np.testing.assert_array_equal(plain.model.weights, plain.dcc_weights)


def test_solve_stage_needs_existing(rng):
    model = init_weights(3, 2, seed=0)
    with pytest.raises(ConfigError):
        solve_stage(StageInput(rng.normal(size=(3, 4)), [0] * 4, np.zeros((2, 0), np.int8), []), model, Hyperparams())
