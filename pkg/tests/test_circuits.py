import pytest
from hypothesis import given, strategies as st

from tripdte.circuits import (eq_const_many, eq_test, inner_product_bits, lt_and_count, lt_compare, mux_index,
                              open_feature_mask, pool, prepare_feature_mask, triple_gen)
from tripdte.errors import ProtocolAbort, TokenReuseError
from tripdte.rss import RssShare, open_values, share_input

from conftest import ok3, run3
from test_rss import Flip


@given(st.integers(1, 64), st.data())
def test_lt_compare(k, data):
    x = data.draw(st.integers(0, 2**k - 1))
    t = data.draw(st.one_of(st.just(x), st.integers(0, 2**k - 1)))

    def f(p):
        a = share_input(p, x if p.id == 1 else None, 1, k)
        b = share_input(p, t if p.id == 0 else None, 0, k)
        r = lt_compare(p, a, b)
        p.verify()
        return open_values(p, r)
    assert ok3(f)[0] == int(x < t)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 16, 17, 64])
def test_lt_uses_exactly_its_triple_budget(k):
    def f(p):
        triple_gen(p, lt_and_count(k), 1)
        before = pool(p, 1).size
        a = share_input(p, 1 if p.id == 1 else None, 1, k)
        b = share_input(p, 0 if p.id == 0 else None, 0, k)
        lt_compare(p, a, b)
        p.verify()
        return before - pool(p, 1).size
    assert ok3(f) == [lt_and_count(k)] * 3


def test_lt_and_count_frozen():
    assert [lt_and_count(k) for k in (1, 2, 16, 64)] == [1, 3, 45, 189]


@given(st.integers(1, 70), st.lists(st.integers(0, 10**6), min_size=1, max_size=4))
def test_eq_const_many(m, raw):
    idxs = [v % m for v in raw]
    lm = max(1, (m - 1).bit_length())

    def f(p):
        sh = share_input(p, idxs if p.id == 2 else None, 2, lm, len(idxs))
        out = eq_const_many(p, sh, m)
        p.verify()
        return open_values(p, out)
    got = ok3(f)[0]
    assert got == [1 << i for i in idxs]


@given(st.integers(0, 15), st.integers(0, 15))
def test_eq_test(x, j):
    def f(p):
        s = share_input(p, x if p.id == 0 else None, 0, 4)
        return open_values(p, eq_test(p, s, j))
    assert ok3(f)[0] == int(x == j)


@given(st.integers(0, 1), st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
def test_mux_index(b, l, r):
    def f(p):
        sb = share_input(p, b if p.id == 0 else None, 0, 1)
        sl, sr = share_input(p, [l, r] if p.id == 0 else None, 0, 16, 2)
        out = mux_index(p, sb, sl, sr)
        p.verify()
        return open_values(p, out)
    assert ok3(f)[0] == (l if b else r)


@given(st.integers(1, 12), st.integers(1, 16), st.data())
def test_inner_product_bits(n, k, data):
    xs = data.draw(st.lists(st.integers(0, 2**k - 1), min_size=n, max_size=n))
    sel = data.draw(st.integers(0, n - 1))
    levels = 2

    def f(p):
        X = RssShare.concat(share_input(p, xs if p.id == 1 else None, 1, k, n))
        v = share_input(p, 1 << sel if p.id == 0 else None, 0, n)
        fm = prepare_feature_mask(p, n, k, levels)
        open_feature_mask(p, fm, X)
        outs = [inner_product_bits(p, X, v, fm) for _ in range(levels)]
        outs.append(inner_product_bits(p, X, v))
        p.verify()
        return open_values(p, outs)
    assert ok3(f)[0] == [xs[sel]] * (levels + 1)


def test_feature_mask_levels_are_single_use():
    def f(p):
        X = share_input(p, 3 if p.id == 1 else None, 1, 8)
        v = share_input(p, 1 if p.id == 0 else None, 0, 1)
        fm = prepare_feature_mask(p, 1, 8, 1)
        open_feature_mask(p, fm, X)
        inner_product_bits(p, X, v, fm)
        inner_product_bits(p, X, v, fm)
    _, err, _ = run3(f)
    assert all(isinstance(e, TokenReuseError) for e in err)


@pytest.mark.parametrize("bad", [0, 1, 2])
def test_bad_triples_are_caught(bad):
    def f(p):
        triple_gen(p, 64, 1)
        p.verify()
    _, err, _ = run3(f, adversaries={bad: Flip("triple-c")})
    assert any(isinstance(e, ProtocolAbort) for i, e in enumerate(err) if i != bad)
