import pytest
from hypothesis import given, settings, strategies as st

from tripdte.errors import ProtocolAbort, TokenReuseError
from tripdte.oselect import (SelectArray, domain_bits, dpf_os_preprocess, dpf_os_select, rss_os_preprocess,
                             rss_os_select)
from tripdte.rss import RssVector, open_values, share_input

from conftest import ok3, run3
from test_rss import Flip

KINDS = {"rss": (rss_os_preprocess, rss_os_select), "dpf": (dpf_os_preprocess, dpf_os_select)}


def _select_all(kind, T_vals, idxs, width=24):
    pre, sel = KINDS[kind]
    m = len(T_vals)

    def f(p):
        T = SelectArray(RssVector.from_shares(share_input(p, T_vals if p.id == 0 else None, 0, width, m)))
        toks = pre(p, m, len(idxs))
        lm = max(1, domain_bits(m))
        I = share_input(p, idxs if p.id == 1 else None, 1, lm, len(idxs))
        outs = [sel(p, T, i, t) for i, t in zip(I, toks)]
        p.verify()
        return open_values(p, outs)
    return ok3(f)[0]


@pytest.mark.parametrize("kind", ["rss", "dpf"])
@given(st.integers(0, 8), st.data())
@settings(max_examples=15)
def test_select_returns_entry(kind, lmexp, data):
    m = 2**lmexp
    T = data.draw(st.lists(st.integers(0, 2**24 - 1), min_size=m, max_size=m))
    idxs = data.draw(st.lists(st.integers(0, m - 1), min_size=1, max_size=3))
    assert _select_all(kind, T, idxs) == [T[i] for i in idxs]


@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_select_above_key_threshold(kind):
    m = 256  # past the small-domain vector fallback
    T = [(j * 7919) % 2**24 for j in range(m)]
    idxs = [0, 255, 128]
    assert _select_all(kind, T, idxs) == [T[i] for i in idxs]


@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_tokens_are_single_use(kind):
    pre, sel = KINDS[kind]

    def f(p):
        T = RssVector.from_shares(share_input(p, [1, 2, 3, 4] if p.id == 0 else None, 0, 8, 4))
        tok = pre(p, 4, 1)[0]
        i = share_input(p, 2 if p.id == 0 else None, 0, 2)
        sel(p, T, i, tok)
        sel(p, T, i, tok)
    _, err, _ = run3(f)
    assert all(isinstance(e, TokenReuseError) for e in err)


def test_dpf_os_online_bytes_grow_with_log_m_only():
    def online(m):
        def f(p):
            T = RssVector.from_shares(share_input(p, list(range(m)) if p.id == 0 else None, 0, 32, m))
            tok = dpf_os_preprocess(p, m, 1)[0]
            i = share_input(p, 1 if p.id == 0 else None, 0, domain_bits(m))
            before = p.ep.stats.sent_bytes()
            dpf_os_select(p, T, i, tok)
            return p.ep.stats.sent_bytes() - before
        return sum(ok3(f))
    small, big = online(2**4), online(2**12)
    assert big - small <= 3 * 3 * 2  # at most one extra byte per index message


@pytest.mark.parametrize("site", ["os-reshare"])
@pytest.mark.parametrize("bad", [0, 1, 2])
@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_reshare_error_changes_output(site, bad, kind):
    """A reshare error is not caught here (the MAC check does that) but it does corrupt the value."""
    pre, sel = KINDS[kind]

    def f(p):
        T = RssVector.from_shares(share_input(p, [10, 20, 30, 40] if p.id == 0 else None, 0, 8, 4))
        tok = pre(p, 4, 1)[0]
        i = share_input(p, 2 if p.id == 0 else None, 0, 2)
        return open_values(p, sel(p, T, i, tok))
    out, err, _ = run3(f, adversaries={bad: Flip(site)})
    assert err == [None] * 3
    assert out[0] == 30 ^ 1


@pytest.mark.parametrize("site", ["rdx-share"])
@pytest.mark.parametrize("bad", [0, 1, 2])
def test_dpf_dealer_cheating_caught_in_preprocessing(site, bad):
    def f(p):
        dpf_os_preprocess(p, 128, 2)
    _, err, _ = run3(f, adversaries={bad: Flip(site)})
    assert any(isinstance(e, ProtocolAbort) for i, e in enumerate(err) if i != bad)
