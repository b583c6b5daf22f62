import hashlib
import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tripdte import dpf as D
from tripdte.gf2 import field
from tripdte.prf import Prg

from conftest import DATA
from oracles import gf_mul_ref, point_fn


def _vec(v):
    return D.to_int_vector(v)


@given(st.integers(1, 10), st.integers(0, 2**32), st.sampled_from([1, 8, 64, 128]), st.data())
def test_full_domain_is_point_function(lm, seed, out_bits, data):
    rng = Prg(seed)
    alpha = data.draw(st.integers(0, 2**lm - 1))
    beta = data.draw(st.integers(0, 2**out_bits - 1))
    k0, k1 = D.dpf_gen(D.PointFunction(alpha, beta, lm), rng, out_bits)
    got = [a ^ b for a, b in zip(_vec(D.eval_full(k0)), _vec(D.eval_full(k1)))]
    assert got == point_fn(alpha, beta, 2**lm)
    x = data.draw(st.integers(0, 2**lm - 1))
    assert D.dpf_eval(k0, x) ^ D.dpf_eval(k1, x) == (beta if x == alpha else 0)
    assert D.dpf_eval(k0, x) == _vec(D.eval_full(k0))[x]


@pytest.mark.parametrize("lm", range(0, 14))
def test_key_size_bound(lm):
    k0, _ = D.dpf_gen(D.PointFunction(0, 1, lm), Prg(lm), 64)
    assert k0.size_bits() <= 4 * 128 * (lm + 1) + 64
    # the serialised layout: header, root seed, 17 bytes per level, output word
    assert len(k0.to_bytes()) == 9 + 16 + 17 * lm + 8


@given(st.integers(0, 12), st.integers(0, 2**32))
def test_key_serialisation_roundtrip(lm, seed):
    rng = Prg(seed)
    k0, k1 = D.dpf_gen(D.PointFunction(rng.randbelow(2**lm), 1, lm), rng, 64)
    for k in (k0, k1):
        assert D.DpfKey.from_bytes(k.to_bytes()) == k


def test_batched_matches_single():
    rng = Prg(3)
    keys = [D.dpf_gen(D.PointFunction(rng.randbelow(64), 1, 6), rng, 64)[i % 2] for i in range(5)]
    many = D.eval_full_many(keys)
    for i, k in enumerate(keys):
        assert np.array_equal(many[i], D.eval_full(k))


def test_golden_keys():
    """Key bytes for a fixed seed are pinned (format and PRG stability)."""
    with open(os.path.join(DATA, "golden.json")) as fh:
        golden = json.load(fh)["dpf_keys"]
    rng = Prg(2024)
    k0, k1 = D.dpf_gen(D.PointFunction(37, 1, 7), rng, 64)
    assert [hashlib.sha256(k.to_bytes()).hexdigest() for k in (k0, k1)] == golden


@pytest.mark.parametrize("bad", [b"", b"XXXX" + bytes(40), b"DPF1\x02" + bytes(40)])
def test_bad_key_headers(bad):
    with pytest.raises(D.KeyFormatError):
        D.DpfKey.from_bytes(bad)


def test_bad_control_byte():
    k0, _ = D.dpf_gen(D.PointFunction(1, 1, 3), Prg(1), 64)
    raw = bytearray(k0.to_bytes())
    raw[9 + 16 + 16] = 7
    with pytest.raises(D.KeyFormatError):
        D.DpfKey.from_bytes(bytes(raw))


def _sketch_ref(v: list[int], seed: int, token: int, rdx: int):
    F = field(64)
    m = len(v)
    r, s = D.sketch_coins(seed, m, token)
    z1 = z2 = z3 = zj = 0
    for j in range(m):
        rj, sj = int(r[j]), int(s[j])
        z1 ^= gf_mul_ref(rj, v[j], F.modulus)
        z2 ^= gf_mul_ref(sj, v[j], F.modulus)
        z3 ^= gf_mul_ref(gf_mul_ref(rj, sj, F.modulus), v[j], F.modulus)
        zj ^= gf_mul_ref(j, v[j], F.modulus)
    return (z1, z2, z3), rdx ^ zj


@given(st.integers(0, 7), st.integers(0, 2**32), st.integers(0, 5), st.data())
def test_sketch_matches_reference(lm, seed, token, data):
    m = 2**lm
    vals = data.draw(st.lists(st.integers(0, 2**64 - 1), min_size=m, max_size=m))
    v = np.zeros((m, 2), dtype=np.uint64)
    v[:, 0] = np.array(vals, dtype=np.uint64)
    rdx = data.draw(st.integers(0, 2**lm - 1))
    pi, t, s = D.sketch(v, seed, token, rdx)
    (z1, z2, z3), sref = _sketch_ref(vals, seed, token, rdx)
    assert (pi.z1, pi.z2, pi.z3) == (z1, z2, z3)
    assert s == sref
    tref = 0
    for x in vals:
        tref ^= x
    assert t == tref


def test_sketch_rejects_wide_entries():
    v = np.zeros((4, 2), dtype=np.uint64)
    v[1, 1] = 1
    with pytest.raises(ValueError):
        D.sketch(v, 1)


@given(st.integers(1, 10), st.integers(0, 2**32))
def test_honest_keys_verify(lm, seed):
    rng = Prg(seed)
    a = rng.randbelow(2**lm)
    k0, k1 = D.dpf_gen(D.PointFunction(a, 1, lm), rng, 64)
    r0 = rng.randbelow(2**lm)
    assert D.verify_pair_local(k0, k1, r0, a ^ r0, rng.randbits(64), rng)


@pytest.mark.parametrize("cls", sorted(D.MALFORMED_CLASSES))
@pytest.mark.parametrize("lm", [3, 7, 10])
def test_malformed_keys_rejected(cls, lm):
    rng = Prg(hash((cls, lm)) & 0xFFFF)
    for _ in range(5):
        a = rng.randbelow(2**lm)
        k0, k1 = D.dpf_gen(D.PointFunction(a, 1, lm), rng, 64)
        m0, m1 = D.malform(cls, k0, k1, a, rng)
        if isinstance(m1, bytes):
            with pytest.raises(D.KeyFormatError):
                D.DpfKey.from_bytes(m1)
            continue
        r0 = rng.randbelow(2**lm)
        assert not D.verify_pair_local(m0, m1, r0, a ^ r0, rng.randbits(64), rng)


def test_reduce_vec64_matches_field():
    F = field(64)
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2**63, 50, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = rng.integers(0, 2**63, 50, dtype=np.uint64) * np.uint64(3)
    got = D.reduce_vec64(D.clmul_vec64(a, b))
    assert [int(x) for x in got] == [F.mul(int(x), int(y)) for x, y in zip(a, b)]
