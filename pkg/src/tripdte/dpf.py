"""Two-party distributed point functions with a verification layer.

Binary-tree construction: every level doubles a 128-bit seed with a
fixed-key AES (Matyas-Meyer-Oseas) PRG and applies one correction word;
the leaf seeds are converted to the output group (XOR on out_bits-bit
strings, out_bits <= 128) and fixed up by a final correction word.
Full-domain evaluation is vectorised with numpy over the whole level.

Verification (two evaluators, no dealer): keys that feed oblivious
selection output 64-bit strings.  From a joint coin derive r_j, s_j in
F_{2^64} and compute shares of
    z1 = sum r_j v_j,  z2 = sum s_j v_j,  z3 = sum r_j s_j v_j
in F_{2^64}.  z3 = z1 * z2 holds for vectors of weight <= 1 whose
nonzero entry is 1 (or when v = 0); anything else fails except with
probability about 2^-63.  The product is checked with a dealer-supplied
Beaver triple and a commit-then-open of the two halves.  The unit checks
then pin the weight to exactly one (t = sum v_j = 1) and the position
to the dealer's index share (s = rdx + sum j*v_j = 0).
"""
from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import gf2
from .prf import Prg, Prf, derive_key

KEY_MAGIC = b"DPF1"
KEY_VERSION = 1
SKETCH_FIELD_BITS = 64
SKETCH_BYTES = SKETCH_FIELD_BITS // 8


class KeyFormatError(ValueError):
    pass


# --- fixed-key PRG ---------------------------------------------------------
_FIXED_KEYS = [derive_key(b"dpf-prg", i) for i in range(3)]
_local = threading.local()


def _ciphers():
    c = getattr(_local, "c", None)
    if c is None:
        c = [Cipher(algorithms.AES(k), modes.ECB()).encryptor() for k in _FIXED_KEYS]
        _local.c = c
    return c


def _mmo(which: int, seeds: np.ndarray) -> np.ndarray:
    enc = _ciphers()[which]
    out = np.frombuffer(enc.update(seeds.tobytes()), dtype=np.uint64).reshape(seeds.shape)
    return out ^ seeds


def _expand(seeds: np.ndarray):
    """seeds (N,2) uint64 -> (sL, tL, sR, tR)."""
    left = _mmo(0, seeds)
    right = _mmo(1, seeds)
    tl = (left[:, 0] & 1).astype(np.uint8)
    tr = (right[:, 0] & 1).astype(np.uint8)
    left[:, 0] &= ~np.uint64(1)
    right[:, 0] &= ~np.uint64(1)
    return left, tl, right, tr


def _convert(seeds: np.ndarray, out_bits: int) -> np.ndarray:
    out = _mmo(2, seeds).copy()
    if out_bits < 128:
        lo_bits = min(out_bits, 64)
        out[:, 0] &= np.uint64((1 << lo_bits) - 1) if lo_bits < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
        hi_bits = out_bits - 64
        out[:, 1] = 0 if hi_bits <= 0 else out[:, 1] & np.uint64((1 << hi_bits) - 1)
    return out


def _int_to_words(x: int) -> np.ndarray:
    return np.array([x & 0xFFFFFFFFFFFFFFFF, x >> 64], dtype=np.uint64)


def _words_to_int(w) -> int:
    return int(w[0]) | int(w[1]) << 64


def _seed_bytes(s: np.ndarray) -> bytes:
    return s.astype("<u8").tobytes()


# --- keys -----------------------------------------------------------------
@dataclass(frozen=True)
class PointFunction:
    alpha: int
    beta: int
    domain_bits: int

    def __call__(self, x: int) -> int:
        return self.beta if x == self.alpha else 0


@dataclass
class DpfKey:
    party: int
    domain_bits: int
    out_bits: int
    seed: int
    cw_seeds: list
    cw_tl: list
    cw_tr: list
    cw_out: int

    @property
    def root_t(self) -> int:
        return self.party

    def to_bytes(self) -> bytes:
        out = [KEY_MAGIC, struct.pack("<BBBH", KEY_VERSION, self.party, self.domain_bits, self.out_bits)]
        out.append(self.seed.to_bytes(16, "little"))
        for s, tl, tr in zip(self.cw_seeds, self.cw_tl, self.cw_tr):
            out.append(s.to_bytes(16, "little"))
            out.append(bytes([tl | tr << 1]))
        out.append(self.cw_out.to_bytes((self.out_bits + 7) // 8, "little"))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DpfKey":
        if len(data) < 9 or data[:4] != KEY_MAGIC:
            raise KeyFormatError("bad key header")
        version, party, lm, out_bits = struct.unpack_from("<BBBH", data, 4)
        if version != KEY_VERSION:
            raise KeyFormatError(f"unsupported key version {version}")
        if party not in (0, 1) or not 1 <= out_bits <= 128 or lm > 40:
            raise KeyFormatError("bad key parameters")
        nout = (out_bits + 7) // 8
        need = 9 + 16 + 17 * lm + nout
        if len(data) != need:
            raise KeyFormatError(f"key has {len(data)} bytes, expected {need}")
        off = 9
        seed = int.from_bytes(data[off:off + 16], "little")
        off += 16
        cws, tls, trs = [], [], []
        for _ in range(lm):
            cws.append(int.from_bytes(data[off:off + 16], "little"))
            flags = data[off + 16]
            if flags > 3:
                raise KeyFormatError("bad control-bit byte")
            tls.append(flags & 1)
            trs.append(flags >> 1)
            off += 17
        cw_out = int.from_bytes(data[off:off + nout], "little")
        if cw_out >> out_bits:
            raise KeyFormatError("output correction word too wide")
        return cls(party, lm, out_bits, seed, cws, tls, trs, cw_out)

    def size_bits(self) -> int:
        return 8 * len(self.to_bytes())


def dpf_gen(f: PointFunction, rng: Prg, out_bits: int = 128) -> tuple[DpfKey, DpfKey]:
    lm = f.domain_bits
    if not 0 <= f.alpha < (1 << lm):
        raise ValueError("alpha outside the domain")
    if f.beta >> out_bits:
        raise ValueError("beta wider than the output group")
    s = [rng.randbits(128) & ~1, rng.randbits(128) & ~1]
    roots = list(s)
    t = [0, 1]
    cws, tls, trs = [], [], []
    for lvl in range(lm):
        bit = f.alpha >> (lm - 1 - lvl) & 1
        exp = [_expand(np.array([_int_to_words(si)], dtype=np.uint64)) for si in s]
        sL = [_words_to_int(e[0][0]) for e in exp]
        tL = [int(e[1][0]) for e in exp]
        sR = [_words_to_int(e[2][0]) for e in exp]
        tR = [int(e[3][0]) for e in exp]
        if bit:
            s_cw = sL[0] ^ sL[1]
        else:
            s_cw = sR[0] ^ sR[1]
        tl_cw = tL[0] ^ tL[1] ^ bit ^ 1
        tr_cw = tR[0] ^ tR[1] ^ bit
        cws.append(s_cw)
        tls.append(tl_cw)
        trs.append(tr_cw)
        for b in (0, 1):
            if bit:
                s[b] = sR[b] ^ (s_cw if t[b] else 0)
                t[b] = tR[b] ^ (tr_cw if t[b] else 0)
            else:
                s[b] = sL[b] ^ (s_cw if t[b] else 0)
                t[b] = tL[b] ^ (tl_cw if t[b] else 0)
    conv = [_words_to_int(_convert(np.array([_int_to_words(si)], dtype=np.uint64), out_bits)[0]) for si in s]
    cw_out = f.beta ^ conv[0] ^ conv[1]
    return tuple(DpfKey(b, lm, out_bits, roots[b], list(cws), list(tls), list(trs), cw_out) for b in (0, 1))


def eval_full(key: DpfKey) -> np.ndarray:
    """Shares of f(j) for every j in the domain, as an (m, 2) uint64 array."""
    return eval_full_many([key])[0]


def eval_full_many(keys: list) -> np.ndarray:
    """Full-domain evaluation of several keys of one shape: (K, m, 2) uint64."""
    K = len(keys)
    lm, out_bits = keys[0].domain_bits, keys[0].out_bits
    if any(k.domain_bits != lm or k.out_bits != out_bits for k in keys):
        raise ValueError("keys differ in shape")
    seeds = np.array([_int_to_words(k.seed) for k in keys], dtype=np.uint64).reshape(K, 1, 2)
    ts = np.array([[k.party] for k in keys], dtype=np.uint64)
    for lvl in range(lm):
        n = seeds.shape[1]
        sL, tL, sR, tR = _expand(seeds.reshape(K * n, 2))
        cw = np.array([_int_to_words(k.cw_seeds[lvl]) for k in keys], dtype=np.uint64).reshape(K, 1, 2)
        cl = np.array([k.cw_tl[lvl] for k in keys], dtype=np.uint64).reshape(K, 1)
        cr = np.array([k.cw_tr[lvl] for k in keys], dtype=np.uint64).reshape(K, 1)
        corr = ts[:, :, None] * cw  # cw where t = 1
        nxt = np.empty((K, n, 2, 2), dtype=np.uint64)
        nxt[:, :, 0] = sL.reshape(K, n, 2) ^ corr
        nxt[:, :, 1] = sR.reshape(K, n, 2) ^ corr
        nt = np.empty((K, n, 2), dtype=np.uint64)
        nt[:, :, 0] = tL.reshape(K, n) ^ (ts & cl)
        nt[:, :, 1] = tR.reshape(K, n) ^ (ts & cr)
        seeds = nxt.reshape(K, 2 * n, 2)
        ts = nt.reshape(K, 2 * n)
    m = seeds.shape[1]
    out = _convert(seeds.reshape(K * m, 2), out_bits).reshape(K, m, 2)
    cwo = np.array([_int_to_words(k.cw_out) for k in keys], dtype=np.uint64).reshape(K, 1, 2)
    out ^= ts[:, :, None] * cwo
    return out


def dpf_eval(key: DpfKey, x: int) -> int:
    if not 0 <= x < (1 << key.domain_bits):
        raise ValueError("x outside the domain")
    seed = np.array([_int_to_words(key.seed)], dtype=np.uint64)
    t = key.party
    for lvl in range(key.domain_bits):
        bit = x >> (key.domain_bits - 1 - lvl) & 1
        sL, tL, sR, tR = _expand(seed)
        s_next, t_next = (sR, int(tR[0])) if bit else (sL, int(tL[0]))
        if t:
            s_next = s_next ^ _int_to_words(key.cw_seeds[lvl])
            t_next ^= key.cw_tr[lvl] if bit else key.cw_tl[lvl]
        seed, t = s_next, t_next
    out = _words_to_int(_convert(seed, key.out_bits)[0])
    return out ^ (key.cw_out if t else 0)


def to_int_vector(v: np.ndarray) -> list[int]:
    return [int(a) | int(b) << 64 for a, b in v]


# --- carry-less sums over numpy arrays --------------------------------------
def _bit_matrix(words: np.ndarray) -> np.ndarray:
    """(m, w) uint64 -> (m, 64w) little-endian bit matrix."""
    words = np.ascontiguousarray(words.reshape(words.shape[0], -1), dtype="<u8")
    return np.unpackbits(words.view(np.uint8).reshape(words.shape[0], -1), axis=1, bitorder="little")


def clmul_vec64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise 64x64 -> 128-bit carry-less products as (m, 2) uint64."""
    lo = np.zeros_like(a)
    hi = np.zeros_like(a)
    for q in range(64):
        sel = (b >> np.uint64(q)) & np.uint64(1)
        part = a * sel  # a or 0
        lo ^= part << np.uint64(q)
        if q:
            hi ^= part >> np.uint64(64 - q)
    return np.stack([lo, hi], axis=1)


def reduce_vec64(prod: np.ndarray) -> np.ndarray:
    """Reduce (m, 2) 128-bit carry-less products into F_2^64 (modulus x^64+x^4+x^3+x+1)."""
    lo, hi = prod[:, 0], prod[:, 1]
    one, three, four = np.uint64(1), np.uint64(3), np.uint64(4)
    # hi * x^64 = hi * (x^4 + x^3 + x + 1); bits pushed past x^63 fold once more
    over = (hi >> np.uint64(63)) ^ (hi >> np.uint64(61)) ^ (hi >> np.uint64(60))
    lo = lo ^ hi ^ (hi << one) ^ (hi << three) ^ (hi << four)
    return lo ^ over ^ (over << one) ^ (over << three) ^ (over << four)


def sketch_coins(seed: int, m: int, token: int) -> tuple[np.ndarray, np.ndarray]:
    prf = Prf(derive_key(b"sketch", seed))
    raw = prf.stream(token.to_bytes(12, "little"), 16 * m)
    arr = np.frombuffer(raw, dtype="<u8").reshape(m, 2)
    return arr[:, 0].astype(np.uint64), arr[:, 1].astype(np.uint64)


@dataclass
class VerifyProof:
    z1: int
    z2: int
    z3: int

    def digest(self) -> bytes:
        return hashlib.sha256(b"".join(z.to_bytes(SKETCH_BYTES, "little")
                                       for z in (self.z1, self.z2, self.z3))).digest()


def vdpf_batch_eval(key: DpfKey, seed: int, token: int = 0, rdx_share: int = 0,
                    shares: Optional[np.ndarray] = None):
    """Full-domain shares, this evaluator's sketch, and its (t, s) sums."""
    v = eval_full(key) if shares is None else shares
    pi, t, s = sketch(v, seed, token, rdx_share)
    return v, pi, (t, s)


def sketch(v: np.ndarray, seed: int, token: int = 0, rdx_share: int = 0):
    return sketch_many([v], seed, [token], [rdx_share])[0]


_SKETCH_CHUNK = 1 << 14  # domain points per batched matrix product


def _gf2_colsums(Cb: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Bits of XOR_j Cb[k, j, q] * V[k, j] for every batch k and column q.

    Cb is a (K, m, W) bit array and V a (K, m) uint64 array; returns a
    (K, W, 64) bit array.  The parities come from one float32 batched
    matrix product (exact while m < 2^24).
    """
    K, m, W = Cb.shape
    Vb = _bit_matrix(V.reshape(K * m, 1)).reshape(K, m, 64).astype(np.float32)
    P = np.matmul(Cb.astype(np.float32).transpose(0, 2, 1), Vb)
    return (P.astype(np.int32) & 1).astype(np.uint8)


def _diag_xor(bits: np.ndarray) -> list[int]:
    """XOR_q (row_q << q) for each batch entry of a (K, W, w) bit array."""
    K, W, w = bits.shape
    acc = np.zeros((K, W + w), dtype=np.uint8)
    for q in range(W):
        acc[:, q:q + w] ^= bits[:, q, :]
    packed = np.packbits(acc, axis=1, bitorder="little")
    return [int.from_bytes(row.tobytes(), "little") for row in packed]


def sketch_many(vs: list, seed: int, tokens: list, rdx_shares: list):
    """Sketches of several full-domain share vectors of one length.

    Each v is an (m, 2) uint64 array whose high words must be zero.  For
    each: z1 = sum r_j v_j, z2 = sum s_j v_j, z3 = sum r_j s_j v_j in
    F_2^64 with per-token coins (r, s), the XOR t of all entries, and
    s = rdx_share + sum j v_j.
    """
    if not vs:
        return []
    F = gf2.field(SKETCH_FIELD_BITS)
    m = vs[0].shape[0]
    if m >= 1 << 24:
        raise ValueError("domain too large for exact float accumulation")
    jw = max(1, (m - 1).bit_length())
    jbits = _bit_matrix(np.arange(m, dtype=np.uint64))[:, :jw]
    per = max(1, _SKETCH_CHUNK // m)
    out = []
    for lo in range(0, len(vs), per):
        chunk = vs[lo:lo + per]
        K = len(chunk)
        V2 = np.stack(chunk)
        if V2[:, :, 1].any():
            raise ValueError("share vector wider than the sketch field")
        V = np.ascontiguousarray(V2[:, :, 0])
        coins = [sketch_coins(seed, m, tok) for tok in tokens[lo:lo + per]]
        r = np.concatenate([c[0] for c in coins])
        s_ = np.concatenate([c[1] for c in coins])
        rs = reduce_vec64(clmul_vec64(r, s_))
        C = np.concatenate([_bit_matrix(r), _bit_matrix(s_), _bit_matrix(rs),
                            np.tile(jbits, (K, 1))], axis=1).reshape(K, m, -1)
        cols = _gf2_colsums(C, V)
        z1 = _diag_xor(cols[:, 0:64])
        z2 = _diag_xor(cols[:, 64:128])
        z3 = _diag_xor(cols[:, 128:192])
        zj = _diag_xor(cols[:, 192:192 + jw])
        tsum = np.bitwise_xor.reduce(V, axis=1)
        for i in range(K):
            pi = VerifyProof(F.reduce(z1[i]), F.reduce(z2[i]), F.reduce(z3[i]))
            out.append((pi, int(tsum[i]), rdx_shares[lo + i] ^ F.reduce(zj[i])))
    return out


@dataclass
class BeaverShare:
    a: int
    b: int
    c: int


def beaver_deal(rng: Prg) -> tuple[BeaverShare, BeaverShare]:
    F = gf2.field(SKETCH_FIELD_BITS)
    w = SKETCH_FIELD_BITS
    a, b = rng.randbits(w), rng.randbits(w)
    c = F.mul(a, b)
    a0, b0, c0 = rng.randbits(w), rng.randbits(w), rng.randbits(w)
    return BeaverShare(a0, b0, c0), BeaverShare(a ^ a0, b ^ b0, c ^ c0)


def sketch_masks(pi: VerifyProof, bv: BeaverShare) -> tuple[int, int]:
    """(d, e) = (z1 + a, z2 + b), this evaluator's shares; both get opened."""
    return pi.z1 ^ bv.a, pi.z2 ^ bv.b


def sketch_residue(pi: VerifyProof, bv: BeaverShare, d: int, e: int, party: int) -> int:
    """This evaluator's share of z3 + z1*z2; the two shares must be equal."""
    F = gf2.field(SKETCH_FIELD_BITS)
    r = pi.z3 ^ bv.c ^ F.mul(d, bv.b) ^ F.mul(e, bv.a)
    if party == 0:
        r ^= F.mul(d, e)
    return r


def verify_pair_local(k0: DpfKey, k1: DpfKey, rdx0: int, rdx1: int, seed: int, rng: Prg) -> bool:
    """Both evaluators' checks in one process (tests and tamper sweeps)."""
    _, p0, (t0, s0) = vdpf_batch_eval(k0, seed, rdx_share=rdx0)
    _, p1, (t1, s1) = vdpf_batch_eval(k1, seed, rdx_share=rdx1)
    b0, b1 = beaver_deal(rng)
    d0, e0 = sketch_masks(p0, b0)
    d1, e1 = sketch_masks(p1, b1)
    d, e = d0 ^ d1, e0 ^ e1
    if sketch_residue(p0, b0, d, e, 0) != sketch_residue(p1, b1, d, e, 1):
        return False
    return (t0 ^ t1) == 1 and (s0 ^ s1) == 0


# --- malformed key corpus ------------------------------------------------------
def _flip(key: DpfKey, **changes) -> DpfKey:
    d = dict(key.__dict__)
    for k, v in changes.items():
        d[k] = v
    d["cw_seeds"] = list(d["cw_seeds"])
    d["cw_tl"] = list(d["cw_tl"])
    d["cw_tr"] = list(d["cw_tr"])
    return DpfKey(**d)


def _flip_seed_cw(level_of):
    def f(k0, k1, alpha, lm, rng):
        lvl = level_of(lm)
        cws = list(k1.cw_seeds)
        cws[lvl] ^= 1 << (1 + rng.randbelow(127))
        return _flip(k0, cw_seeds=cws), _flip(k1, cw_seeds=cws)
    return f


def _flip_t(which, level_of):
    def f(k0, k1, alpha, lm, rng):
        lvl = level_of(lm)
        arr = list(getattr(k1, which))
        arr[lvl] ^= 1
        return _flip(k0, **{which: arr}), _flip(k1, **{which: arr})
    return f


def _regen(beta_fn=None, alpha_fn=None):
    def f(k0, k1, alpha, lm, rng):
        a = alpha_fn(alpha, lm, rng) if alpha_fn else alpha
        b = beta_fn(rng, k0.out_bits) if beta_fn else 1
        return dpf_gen(PointFunction(a, b, lm), rng, k0.out_bits)
    return f


def _random_beta(rng, bits):
    while True:
        b = rng.randbits(bits)
        if b not in (0, 1):
            return b


def _other_alpha(alpha, lm, rng):
    return alpha ^ (1 + rng.randbelow((1 << lm) - 1))


def _root_seed(k0, k1, alpha, lm, rng):
    return k0, _flip(k1, seed=rng.randbits(128) & ~1)


def _out_cw(k0, k1, alpha, lm, rng):
    cw = k1.cw_out ^ (1 << rng.randbelow(k1.out_bits))
    return _flip(k0, cw_out=cw), _flip(k1, cw_out=cw)


def _truncate(k0, k1, alpha, lm, rng):
    return k0, k1.to_bytes()[:-1 - rng.randbelow(16)]


MALFORMED_CLASSES = {
    "seed-cw-first": _flip_seed_cw(lambda lm: 0),
    "seed-cw-middle": _flip_seed_cw(lambda lm: lm // 2),
    "seed-cw-last": _flip_seed_cw(lambda lm: lm - 1),
    "tl-cw-first": _flip_t("cw_tl", lambda lm: 0),
    "tr-cw-last": _flip_t("cw_tr", lambda lm: lm - 1),
    "out-cw": _out_cw,
    "beta-zero": _regen(beta_fn=lambda rng, bits: 0),
    "beta-three": _regen(beta_fn=lambda rng, bits: 3),
    "beta-random": _regen(beta_fn=_random_beta),
    "wrong-alpha": _regen(alpha_fn=_other_alpha),
    "root-seed": _root_seed,
    "truncated": _truncate,
}


def malform(cls: str, k0: DpfKey, k1: DpfKey, alpha: int, rng: Prg):
    """Return (k0, k1) corrupted per class; k1 may come back as raw bytes.

    Correction words are corrupted in both keys alike, as a dealer would
    have to for the change to matter on the evaluation path.
    """
    return MALFORMED_CLASSES[cls](k0, k1, alpha, k0.domain_bits, rng)
