import pytest
from hypothesis import given, strategies as st

from tripdte import bits as B
from tripdte.gf2 import (ContextMismatch, FieldCtx, GfElement, BitVec, clmul, field, find_irreducible,
                         is_irreducible, spread_bits)

from oracles import clmul_ref, gf_mul_ref, irreducible_ref

WIDTHS = [2, 3, 8, 16, 34, 40, 64, 72, 128, 200, 1040]

# frozen moduli (low terms only); pinned so shares written today stay readable
FROZEN = {2: 0x3, 8: 0x1B, 16: 0x2B, 34: 0x81, 40: 0x39, 64: 0x1B, 72: 0x609, 128: 0x87, 1040: 0x8501}


@pytest.mark.parametrize("ell,low", sorted(FROZEN.items()))
def test_frozen_moduli(ell, low):
    assert find_irreducible(ell) == (1 << ell) | low
    assert field(ell).modulus == (1 << ell) | low


def test_degree_multiple_of_8_uses_pentanomial():
    for ell in (8, 16, 64, 128):
        assert bin(find_irreducible(ell)).count("1") == 5


@pytest.mark.parametrize("ell", range(2, 13))
def test_irreducibility_against_trial_division(ell):
    assert irreducible_ref(find_irreducible(ell))
    for f in range(1 << ell, 1 << (ell + 1)):
        assert is_irreducible(f) == irreducible_ref(f), hex(f)


@given(st.integers(0, 1 << 300), st.integers(0, 1 << 300))
def test_clmul_matches_reference(a, b):
    assert clmul(a, b) == clmul_ref(a, b)


@given(st.integers(0, 1 << 200))
def test_spread_is_squaring(a):
    assert spread_bits(a) == clmul_ref(a, a)


@given(st.sampled_from(WIDTHS), st.data())
def test_mul_matches_reference(ell, data):
    F = field(ell)
    a = data.draw(st.integers(0, F.mask))
    b = data.draw(st.integers(0, F.mask))
    assert F.mul(a, b) == gf_mul_ref(a, b, F.modulus)
    assert F.scaler(a)(b) == F.mul(a, b)


@given(st.sampled_from(WIDTHS), st.data())
def test_field_axioms(ell, data):
    F = field(ell)
    a, b, c = (data.draw(st.integers(0, F.mask)) for _ in range(3))
    assert F.mul(a, b) == F.mul(b, a)
    assert F.mul(a, b ^ c) == F.mul(a, b) ^ F.mul(a, c)
    assert F.mul(F.mul(a, b), c) == F.mul(a, F.mul(b, c))
    assert F.mul(a, 1) == a


@given(st.sampled_from([8, 16, 34, 64]), st.data())
def test_nonzero_elements_invert(ell, data):
    F = field(ell)
    a = data.draw(st.integers(1, F.mask))
    inv = F.pow(a, (1 << ell) - 2)
    assert F.mul(a, inv) == 1


def test_reducible_modulus_rejected():
    with pytest.raises(ValueError):
        FieldCtx(8, (1 << 8) | 1)  # x^8 + 1 = (x + 1)^8


def test_elements_of_different_fields_do_not_mix():
    a = GfElement(3, field(64))
    b = GfElement(3, field(72))
    with pytest.raises(ContextMismatch):
        a * b
    with pytest.raises(ContextMismatch):
        BitVec(5, 8).as_field(field(16))
    assert (a * a).coeffs == 5
    assert (a + a).coeffs == 0


def test_small_field_warns():
    from tripdte.gf2 import InsecureFieldWarning
    with pytest.warns(InsecureFieldWarning):
        FieldCtx(8, find_irreducible(8))


@given(st.lists(st.integers(0, 255), min_size=1, max_size=100))
def test_concat_split_roundtrip(vals):
    assert B.split(B.concat(vals, 8), 8, len(vals)) == vals
    assert B.unpack_words(B.pack_words(vals, 8), 8, len(vals)) == vals


@given(st.integers(1, 40), st.integers(1, 9), st.data())
def test_fan_and_fold(count, group, data):
    y = data.draw(st.integers(0, B.mask(count)))
    f = B.fan(y, count, group)
    for i in range(count):
        chunk = f >> (i * group) & B.mask(group)
        assert chunk == (B.mask(group) if y >> i & 1 else 0)
    x = data.draw(st.integers(0, B.mask(count * group)))
    ref = 0
    for i in range(count):
        ref ^= x >> (i * group) & B.mask(group)
    assert B.fold_xor(x, count, group) == ref
