import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsmp.gf2m import (
    GF2Error,
    GF2Vec,
    add,
    index_to_vec,
    inner,
    inner_int,
    parity,
    universe_bits,
    vec_to_index,
)


def v(s):
    return GF2Vec.from_str(s)


def test_add_examples():
    assert add(v("000101"), v("000110")) == v("000011")
    u = v("101101")
    assert add(u, u) == GF2Vec.zero(6)
    assert add(u, GF2Vec.zero(6)) == u


def test_inner_examples():
    assert inner(GF2Vec.zero(3), v("111")) == 0
    assert inner(v("101"), v("100")) == 1
    assert inner(v("110"), v("011")) == 1


def test_index_encoding():
    assert str(index_to_vec(0, 6)) == "000000"
    assert str(index_to_vec(5, 6)) == "000101"
    assert all(vec_to_index(index_to_vec(a, 6)) == a for a in range(64))


@pytest.mark.parametrize("call", [
    lambda: add(GF2Vec(1, 3), GF2Vec(1, 4)),
    lambda: inner(GF2Vec(1, 3), GF2Vec(1, 4)),
    lambda: index_to_vec(64, 6),
    lambda: index_to_vec(-1, 6),
    lambda: GF2Vec(0, 1),
])
def test_usage_errors(call):
    with pytest.raises(GF2Error):
        call()


def test_universe_bits():
    assert universe_bits(2) == 4
    assert universe_bits(4) == 6
    assert universe_bits(64) == 14
    with pytest.raises(GF2Error):
        universe_bits(6)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_laws_exhaustive_small(m):
    vecs = [GF2Vec(a, m) for a in range(1 << m)]
    for a, b, c in itertools.product(vecs, repeat=3):
        assert add(add(a, b), c) == add(a, add(b, c))
        assert inner(add(a, c), b) == inner(a, b) ^ inner(c, b)
    for a, b in itertools.product(vecs, repeat=2):
        assert add(a, b) == add(b, a)


@pytest.mark.parametrize("m", [5, 6, 7, 8])
def test_laws_exhaustive_vectorized(m):
    # every (a, b, c) triple, one c at a time
    a = np.arange(1 << m)[:, None]
    b = np.arange(1 << m)[None, :]
    assert ((a ^ b) == (b ^ a)).all()
    ip_ab = parity(a & b)
    for c in range(1 << m):
        assert ((a ^ b) ^ c == a ^ (b ^ c)).all()
        assert (parity((a ^ c) & b) == ip_ab ^ parity(c & b)).all()


@pytest.mark.parametrize("m", range(2, 11))
def test_hyperplane_size(m):
    t = np.arange(1 << m)
    for s in range(1, 1 << m):
        zeros = int((parity(t & s) == 0).sum())
        assert zeros == 1 << (m - 1)


@given(st.integers(2, 40).flatmap(lambda m: st.tuples(
    st.just(m), st.integers(0, (1 << m) - 1), st.integers(0, (1 << m) - 1))))
def test_inner_matches_int_form(args):
    m, a, b = args
    assert inner(GF2Vec(a, m), GF2Vec(b, m)) == inner_int(a, b)
    assert inner(GF2Vec(a, m), GF2Vec(b, m)) == inner(GF2Vec(b, m), GF2Vec(a, m))


def test_parity_dtype_is_signed():
    # 1 - 2 * parity must give +-1, not wrap around
    assert (1 - 2 * parity(np.array([0, 1, 3, 7]))).tolist() == [1, -1, 1, -1]
