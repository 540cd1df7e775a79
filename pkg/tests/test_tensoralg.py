import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import quadrature_signature, triple_product
from sigflow.errors import NumericalError, ShapeError
from sigflow.tensoralg import (
    TruncTensor,
    add,
    dimension,
    feature_dimension,
    l2_norm,
    scale,
    tensor_exp,
    tensor_product,
)


def random_tensor(rng, d, depth):
    return TruncTensor(d, depth, tuple(rng.standard_normal(d ** k) for k in range(depth + 1)))


@pytest.mark.parametrize("d,n,full,feat", [(3, 5, 364, 363), (3, 4, 121, 120), (1, 7, 8, 7)])
def test_dimension_counts(d, n, full, feat):
    assert dimension(d, n) == full
    assert feature_dimension(d, n) == feat


@given(st.integers(1, 5), st.integers(0, 5))
def test_dimension_closed_form(d, n):
    expected = n + 1 if d == 1 else (d ** (n + 1) - 1) // (d - 1)
    assert dimension(d, n) == expected
    assert TruncTensor.zeros(d, n).size == expected


def test_invalid_block_sizes_rejected():
    with pytest.raises(ShapeError):
        TruncTensor(2, 1, (np.ones(1), np.ones(3)))
    with pytest.raises(ShapeError):
        TruncTensor(2, 2, (np.ones(1), np.ones(2)))
    with pytest.raises(NumericalError):
        TruncTensor(1, 1, (np.ones(1), np.array([np.nan])))


def test_levels_are_read_only():
    t = TruncTensor.unit(2, 2)
    with pytest.raises(ValueError):
        t.levels[1][0] = 3.0


def test_unit_is_two_sided_identity():
    rng = np.random.default_rng(1)
    b = random_tensor(rng, 3, 3)
    u = TruncTensor.unit(3, 3)
    assert tensor_product(u, b).allclose(b, 0.0)
    assert tensor_product(b, u).allclose(b, 0.0)


def test_single_cross_term():
    a = TruncTensor(2, 2, (np.ones(1), np.array([1.0, 0.0]), np.zeros(4)))
    b = TruncTensor(2, 2, (np.ones(1), np.array([0.0, 1.0]), np.zeros(4)))
    np.testing.assert_array_equal(tensor_product(a, b).levels[2], [0.0, 1.0, 0.0, 0.0])


def test_product_matches_loop_oracle_and_is_associative():
    rng = np.random.default_rng(2)
    a, b, c = (random_tensor(rng, 2, 3) for _ in range(3))
    ref = triple_product(a.levels, b.levels, 2, 3)
    for got, want in zip(tensor_product(a, b).levels, ref):
        np.testing.assert_allclose(got, want, atol=1e-12)
    left = tensor_product(tensor_product(a, b), c)
    right = tensor_product(a, tensor_product(b, c))
    assert left.allclose(right, 1e-12)


def test_distributivity():
    rng = np.random.default_rng(3)
    a, b, c = (random_tensor(rng, 3, 3) for _ in range(3))
    assert tensor_product(a, add(b, c)).allclose(add(tensor_product(a, b), tensor_product(a, c)), 1e-12)


def test_product_shape_mismatch():
    with pytest.raises(ShapeError):
        tensor_product(TruncTensor.unit(2, 2), TruncTensor.unit(3, 2))
    with pytest.raises(ShapeError):
        tensor_product(TruncTensor.unit(2, 2), TruncTensor.unit(2, 3))


def test_exp_of_zero_is_unit():
    assert tensor_exp(np.zeros(3), 4).allclose(TruncTensor.unit(3, 4), 0.0)


def test_exp_small_case():
    t = tensor_exp([1.0, 2.0], 2)
    np.testing.assert_array_equal(t.levels[1], [1.0, 2.0])
    np.testing.assert_allclose(t.levels[2], [0.5, 1.0, 1.0, 2.0])


def test_exp_matches_quadrature():
    v = np.random.default_rng(4).standard_normal(2)
    ref = quadrature_signature(np.stack([np.zeros(2), v]), 3)
    got = tensor_exp(v, 3)
    for k in range(4):
        np.testing.assert_allclose(got.levels[k], ref[k], atol=1e-8)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_exp_commutative_case(v, w):
    lhs = tensor_product(tensor_exp([v], 5), tensor_exp([w], 5))
    assert lhs.allclose(tensor_exp([v + w], 5), 1e-12 * max(1.0, (abs(v) + abs(w)) ** 5))


def test_norm_examples():
    assert l2_norm(TruncTensor.zeros(2, 3)) == 0.0
    a = TruncTensor(1, 2, (np.ones(1), np.array([3.0]), np.array([4.0])))
    assert l2_norm(a) == 5.0
    r = random_tensor(np.random.default_rng(5), 2, 3)
    assert l2_norm(scale(r, -1.0)) == l2_norm(r)


def test_vector_round_trip():
    r = random_tensor(np.random.default_rng(6), 3, 3)
    assert TruncTensor.from_vector(r.to_vector(), 3, 3).allclose(r, 0.0)
    feat = TruncTensor.from_vector(r.to_vector(False), 3, 3, include_level0=False)
    assert feat.levels[0][0] == 1.0
    np.testing.assert_array_equal(feat.to_vector(False), r.to_vector(False))


def test_row_major_layout():
    t = tensor_exp([1.0, 10.0], 2)
    # entry (i, j) of level 2 sits at i * d + j
    assert t.level(2)[0, 1] == t.levels[2][1] == 5.0
    assert t.level(2)[1, 0] == t.levels[2][2] == 5.0


@settings(max_examples=25)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
def test_add_scale_consistency(d, n, seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, d, n)
    assert add(a, a).allclose(scale(a, 2.0), 0.0)
    assert (a - a).allclose(TruncTensor.zeros(d, n), 0.0)
