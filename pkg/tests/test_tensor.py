import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterckm.tensor import (
    TensorError,
    best_rank1,
    compress,
    cp_decompose,
    fold,
    frobenius,
    mode_n_product,
    multi_mode_product,
    outer3,
    relative_residual,
    unfold,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def brute_unfold(t, mode):
    # element (i1, i2, i3) -> row i_n, column from the other indices, lowest mode fastest
    dims = t.shape
    others = [m for m in range(3) if m != mode - 1]
    out = np.zeros((dims[mode - 1], dims[others[0]] * dims[others[1]]), dtype=t.dtype)
    for i1, i2, i3 in itertools.product(*(range(d) for d in dims)):
        idx = (i1, i2, i3)
        col = idx[others[0]] + dims[others[0]] * idx[others[1]]
        out[idx[mode - 1], col] = t[idx]
    return out


def brute_mode_product(t, m, mode):
    dims = list(t.shape)
    dims[mode - 1] = m.shape[0]
    out = np.zeros(dims, dtype=np.complex128)
    for idx in itertools.product(*(range(d) for d in dims)):
        acc = 0
        for k in range(t.shape[mode - 1]):
            src = list(idx)
            src[mode - 1] = k
            acc += m[idx[mode - 1], k] * t[tuple(src)]
        out[idx] = acc
    return out


dims3 = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=30, deadline=None)
@given(dims=dims3, mode=st.sampled_from([1, 2, 3]), seed=st.integers(0, 2**16))
def test_unfold_matches_bruteforce_and_fold_inverts(dims, mode, seed):
    t = crandn(np.random.default_rng(seed), *dims)
    u = unfold(t, mode)
    np.testing.assert_array_equal(u, brute_unfold(t, mode))
    np.testing.assert_array_equal(fold(u, mode, dims), t)


@settings(max_examples=30, deadline=None)
@given(dims=dims3, mode=st.sampled_from([1, 2, 3]), rows=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_mode_product_matches_bruteforce(dims, mode, rows, seed):
    rng = np.random.default_rng(seed)
    t = crandn(rng, *dims)
    m = crandn(rng, rows, dims[mode - 1])
    got = mode_n_product(t, m, mode)
    want = brute_mode_product(t, m, mode)
    assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))
    # unfolding identity
    assert np.max(np.abs(unfold(got, mode) - m @ unfold(t, mode))) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_mode_products_on_distinct_modes_commute():
    rng = np.random.default_rng(1)
    t = crandn(rng, 3, 4, 5)
    a, c = crandn(rng, 2, 3), crandn(rng, 6, 5)
    x = mode_n_product(mode_n_product(t, a, 1), c, 3)
    y = mode_n_product(mode_n_product(t, c, 3), a, 1)
    assert np.max(np.abs(x - y)) < 1e-12
    z = multi_mode_product(t, a, None, c)
    assert np.max(np.abs(x - z)) < 1e-12


def test_shape_errors():
    t = np.zeros((2, 3, 4))
    with pytest.raises(TensorError):
        mode_n_product(t, np.zeros((2, 5)), 2)
    with pytest.raises(TensorError):
        unfold(t, 4)
    with pytest.raises(TensorError):
        fold(np.zeros((2, 11)), 1, (2, 3, 4))


def test_best_rank1_recovers_exact_rank_one():
    rng = np.random.default_rng(3)
    a, b, c = crandn(rng, 5), crandn(rng, 3), crandn(rng, 7)
    t = outer3(a, b, c)
    f = best_rank1(t)
    assert relative_residual(t, f.full()) < 1e-10
    assert f.converged


def test_cp_exact_rank_two_and_monotone_history():
    rng = np.random.default_rng(4)
    t = sum(outer3(crandn(rng, 6), crandn(rng, 4), crandn(rng, 8)) for _ in range(2))
    f = cp_decompose(t, 2, iters=500, tol=1e-14, restarts=2, seed=0)
    assert relative_residual(t, f.full()) < 1e-6
    hist = np.array(f.residual_history)
    # ALS never increases the fit error (small slack for the ridge term)
    assert np.all(np.diff(hist) <= 1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), rank=st.integers(1, 4))
def test_cp_residual_history_monotone_random(seed, rank):
    t = crandn(np.random.default_rng(seed), 4, 3, 5)
    f = cp_decompose(t, rank, iters=60, restarts=1, seed=seed)
    hist = np.array(f.residual_history)
    assert np.all(np.diff(hist) <= 1e-9)
    # the reported residual is the true one
    assert abs(hist[-1] - relative_residual(t, f.full())) < 1e-6


def test_cp_factors_unit_norm_and_sorted():
    rng = np.random.default_rng(5)
    t = crandn(rng, 4, 4, 4)
    f = cp_decompose(t, 3, restarts=1)
    for m in (f.A, f.B, f.C):
        np.testing.assert_allclose(np.linalg.norm(m, axis=0), 1.0, atol=1e-12)
    w = np.abs(f.weights)
    assert np.all(np.diff(w) <= 0)


def test_cp_rank_bound_and_zero_tensor():
    with pytest.raises(TensorError):
        cp_decompose(np.ones((2, 2, 1)), 5)
    with pytest.raises(TensorError):
        cp_decompose(np.zeros((2, 2, 2)), 1)


def test_compress_is_lossless():
    rng = np.random.default_rng(6)
    t = sum(outer3(crandn(rng, 16), crandn(rng, 3), crandn(rng, 40)) for _ in range(3))
    core, bases = compress(t)
    assert core.shape == (3, 3, 3)
    back = multi_mode_product(core, *bases)
    assert frobenius(back - t) < 1e-10 * frobenius(t)
