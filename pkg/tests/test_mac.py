import pytest
from hypothesis import given, strategies as st

from tripdte.gf2 import field
from tripdte.mac import mac_attach, mac_check, mac_coins, mac_keygen
from tripdte.errors import ProtocolAbort
from tripdte.rss import RssVector, open_values, share_input

from conftest import ok3, run3
from test_rss import Flip


def _attached(p, vals, ell):
    F = field(ell)
    X = share_input(p, vals if p.id == 0 else None, 0, ell, len(vals))
    key = mac_keygen(p, F)
    M = mac_attach(p, X, key, F)
    return F, X, key, M


@given(st.sampled_from([64, 72]), st.lists(st.integers(0, 2**64 - 1), min_size=1, max_size=6))
def test_honest_tags_pass(ell, vals):
    def f(p):
        F, X, key, M = _attached(p, vals, ell)
        mac_check(p, X, M, key, F)
        p.verify()
        a = open_values(p, key.alpha)
        return a, open_values(p, M)
    a, tags = ok3(f)[0]
    F = field(ell)
    assert tags == [F.mul(a, v) for v in vals]


@pytest.mark.parametrize("site", ["mac-attach", "mul-reshare"])
@pytest.mark.parametrize("bad", [0, 1, 2])
def test_tampering_fails_check(site, bad):
    def f(p):
        F, X, key, M = _attached(p, [5, 6, 7], 64)
        mac_check(p, X, M, key, F)
    _, err, _ = run3(f, adversaries={bad: Flip(site)})
    assert any(isinstance(e, ProtocolAbort) and e.site == "mac-check" for i, e in enumerate(err) if i != bad)


def test_value_error_fails_check():
    def f(p):
        F, X, key, M = _attached(p, [5, 6, 7], 64)
        X[1] = X[1].add_public(0x80)
        mac_check(p, X, M, key, F)
    _, err, _ = run3(f)
    assert all(isinstance(e, ProtocolAbort) for e in err)


def test_coins_nonzero_and_deterministic():
    F = field(8)
    c = mac_coins(123, F, 5000)
    assert 0 not in c
    assert c == mac_coins(123, F, 5000)
    assert len(set(c)) == 255
