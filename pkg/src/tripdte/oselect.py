"""Oblivious selection of T[idx] from a shared array and a shared index.

Both protocols preprocess a unit vector at a random position rdx, open
(or reconstruct) Delta = rdx + idx online, and read the rotated vector
u[j] = v[j + Delta], which is the indicator of idx.  The selected word
comes out as a (3,3) sharing that is masked with a zero share and
reshared in one message.  The reshare may carry an additive error; the
MAC check downstream catches it.

rss-os keeps v as an RSS bit vector built with verified equality tests
(linear offline cost).  dpf-os lets a dealer hand DPF keys for the unit
vector to the other two parties, three times with rotating roles, so
offline traffic is O(kappa log m) per token.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bits as B
from . import dpf as D
from .circuits import eq_const_many
from .errors import TokenReuseError
from .rss import (Party, RssShare, RssVector, coin, open_values, rand_share, t2r_convert,
                  zero_share)


def domain_bits(m: int) -> int:
    if m < 1 or m & (m - 1):
        raise ValueError("array length must be a power of two")
    return m.bit_length() - 1


class SelectArray:
    """A shared array prepared for repeated selection (caches own ^ prev)."""

    def __init__(self, vec: RssVector):
        self.vec = vec
        self.width = vec.width
        self.own = vec.own
        self.both = [a ^ b for a, b in zip(vec.own, vec.prev)]
        self.prev = vec.prev

    def __len__(self):
        return len(self.own)


def _as_select(T) -> SelectArray:
    return T if isinstance(T, SelectArray) else SelectArray(T)


def _xor_at(vals: list, idxs) -> int:
    acc = 0
    for j in idxs:
        acc ^= vals[j]
    return acc


def _reshare_word(p: Party, t: int, width: int) -> RssShare:
    sid = p.sid("os-reshare")
    z = p.tamper("os-reshare", t ^ zero_share(p, sid, width)) & B.mask(width)
    p.send(p.next, sid, z.to_bytes(B.nbytes(width), "little"))
    zp = int.from_bytes(p.recv(p.prev, sid), "little")
    return RssShare(z, zp, p.id, width)


# --- rss-os --------------------------------------------------------------------
@dataclass
class RssOsToken:
    rdx: RssShare
    v: RssShare
    used: bool = False


def rss_os_preprocess(p: Party, m: int, count: int = 1) -> list[RssOsToken]:
    lm = domain_bits(m)
    if count == 0:
        return []
    rdx = [rand_share(p, lm) if lm else RssShare(0, 0, p.id, 0) for _ in range(count)]
    if lm == 0:
        vs = [RssShare.public(1, p.id, 1) for _ in range(count)]
    else:
        vs = eq_const_many(p, rdx, m)
    p.verify()
    return [RssOsToken(r, v) for r, v in zip(rdx, vs)]


def rss_os_select(p: Party, T, idx: RssShare, token: RssOsToken) -> RssShare:
    T = _as_select(T)
    m = len(T)
    lm = domain_bits(m)
    if token.used:
        raise TokenReuseError("rss-os token already spent")
    token.used = True
    if lm == 0:
        return RssShare(T.own[0], T.prev[0], p.id, T.width)
    delta = open_values(p, token.rdx ^ idx.bits(0, lm), site="os-open")
    perm = np.arange(m) ^ delta
    u_own = B.to_bits(token.v.own, m)[perm]
    u_prev = B.to_bits(token.v.prev, m)[perm]
    t = _xor_at(T.both, np.flatnonzero(u_own)) ^ _xor_at(T.own, np.flatnonzero(u_prev))
    return _reshare_word(p, t, T.width)


# --- dpf-os --------------------------------------------------------------------
@dataclass
class DpfOsToken:
    """One rotation's material at one party.

    role 0 / 1: evaluator with key share b = role; role 2: the dealer.
    """

    rotation: int
    role: int
    lm: int
    rdx0: Optional[int] = None
    rdx1: Optional[int] = None
    rdx: Optional[int] = None
    key: Optional[bytes] = None
    u: Optional[np.ndarray] = None
    used: bool = False


def _rotation_role(pid: int, rot: int) -> int:
    return (pid - rot) % 3


def _pack_blobs(blobs: list[bytes]) -> bytes:
    return b"".join(len(b).to_bytes(4, "little") + b for b in blobs)


def _unpack_blobs(data: bytes) -> list[bytes]:
    out, off = [], 0
    while off < len(data):
        if off + 4 > len(data):
            raise D.KeyFormatError("truncated blob header")
        n = int.from_bytes(data[off:off + 4], "little")
        off += 4
        if off + n > len(data):
            raise D.KeyFormatError("truncated blob")
        out.append(data[off:off + n])
        off += n
    return out


VEC_MAGIC = b"DPFV"
SB = D.SKETCH_BYTES


def _vector_blob(v: np.ndarray) -> bytes:
    return VEC_MAGIC + np.ascontiguousarray(v, dtype="<u8").tobytes()  # low words only


def _blob_shares(blob: bytes, lm: int) -> tuple[np.ndarray, Optional[D.DpfKey]]:
    m = 1 << lm
    if blob[:4] == VEC_MAGIC:
        raw = blob[4:]
        if len(raw) != D.SKETCH_BYTES * m:
            raise D.KeyFormatError("unit-vector share has wrong length")
        v = np.zeros((m, 2), dtype=np.uint64)
        v[:, 0] = np.frombuffer(raw, dtype="<u8")
        return v, None
    key = D.DpfKey.from_bytes(blob)
    if key.domain_bits != lm or key.out_bits != D.SKETCH_FIELD_BITS:
        raise D.KeyFormatError("key parameters do not match the array")
    return None, key


def dpf_os_preprocess(p: Party, m: int, count: int = 1, small_threshold: int = 64) -> list[list[DpfOsToken]]:
    """`count` token triples (one token per rotation) for arrays of length m."""
    lm = domain_bits(m)
    if count == 0:
        return []
    tokens = [[DpfOsToken(r, _rotation_role(p.id, r), lm) for r in range(3)] for _ in range(count)]
    if lm == 0:
        return tokens
    use_keys = m > small_threshold
    sid = p.sid("dpf-keys")
    # dealer: one rotation per party
    rot_d = (p.id - 2) % 3
    evs = (rot_d, (rot_d + 1) % 3)  # evaluators P_r (b=0), P_{r+1} (b=1)
    blobs = ([], [])
    for c in range(count):
        rdx = p.rng.randbits(lm)
        rdx0 = p.rng.randbits(lm)
        rdx1 = rdx ^ rdx0
        if use_keys:
            k0, k1 = D.dpf_gen(D.PointFunction(rdx, 1, lm), p.rng, D.SKETCH_FIELD_BITS)
            k0, k1 = p.tamper("dpf-key", (k0, k1, rdx))[:2]
            b0 = k0.to_bytes() if isinstance(k0, D.DpfKey) else k0
            b1 = k1.to_bytes() if isinstance(k1, D.DpfKey) else k1
        else:
            v0 = np.frombuffer(p.rng.bytes(D.SKETCH_BYTES * m), dtype="<u8").astype(np.uint64)
            v1 = v0.copy()
            v1[rdx] ^= np.uint64(1)
            b0, b1 = _vector_blob(v0), _vector_blob(v1)
        sent_rdx1 = p.tamper("rdx-share", rdx1) & B.mask(lm)
        bv0, bv1 = D.beaver_deal(p.rng)
        nb = B.nbytes(lm)
        for b, (blob, rr, bv) in enumerate(((b0, rdx0, bv0), (b1, sent_rdx1, bv1))):
            extra = rr.to_bytes(nb, "little") + b"".join(x.to_bytes(SB, "little") for x in (bv.a, bv.b, bv.c))
            blobs[b].append(extra)
            blobs[b].append(blob)
        tok = tokens[c][rot_d]
        tok.rdx, tok.rdx0, tok.rdx1 = rdx, rdx0, rdx1
    p.send(evs[0], sid, _pack_blobs(blobs[0]))
    p.send(evs[1], sid, _pack_blobs(blobs[1]))

    # evaluator roles: rotation p.id with b=0 (dealer = prev), rotation p.id-1 with b=1 (dealer = next)
    mine = {}
    for b, rot, dealer in ((0, p.id, p.prev), (1, (p.id - 1) % 3, p.next)):
        try:
            parts = _unpack_blobs(p.recv(dealer, sid))
            if len(parts) != 2 * count:
                raise D.KeyFormatError("wrong number of keys")
            got = []
            for c in range(count):
                extra, blob = parts[2 * c], parts[2 * c + 1]
                nb = B.nbytes(lm)
                if len(extra) != nb + 3 * SB:
                    raise D.KeyFormatError("bad index/triple share")
                rr = int.from_bytes(extra[:nb], "little")
                bv = D.BeaverShare(*(int.from_bytes(extra[nb + SB * i:nb + SB * (i + 1)], "little")
                                     for i in range(3)))
                v, key = _blob_shares(blob, lm)
                got.append([rr, bv, v if key is None else key, blob])
            keyed = [g for g in got if isinstance(g[2], D.DpfKey)]
            if keyed:
                for g, v in zip(keyed, D.eval_full_many([g[2] for g in keyed])):
                    g[2] = v
        except D.KeyFormatError as exc:
            p.abort("dpf-keys", str(exc))
        mine[rot] = (b, got)

    seed = coin(p, 128)

    # sketch and unit sums, exchanged with the other evaluator
    chk = p.sid("dpf-check")
    state = {}
    for rot, (b, got) in mine.items():
        peer = p.next if b == 0 else p.prev
        msg, proofs = [], []
        sk = D.sketch_many([g[2] for g in got], seed, [c * 3 + rot for c in range(count)],
                           [g[0] for g in got])
        for (rr, bv, v, blob), (pi, t, s) in zip(got, sk):
            d, e = D.sketch_masks(pi, bv)
            msg.append(b"".join(x.to_bytes(SB, "little") for x in (d, e, t, s)))
            proofs.append((pi, bv, d, e, t, s))
        p.send(peer, chk, b"".join(msg))
        state[rot] = (b, peer, proofs)
    residues = {}
    for rot, (b, peer, proofs) in state.items():
        theirs = p.recv(peer, chk)
        if len(theirs) != 4 * SB * count:
            p.abort("dpf-verify", "malformed check message")
        res = []
        for c, (pi, bv, d, e, t, s) in enumerate(proofs):
            od, oe, ot, os_ = (int.from_bytes(theirs[SB * (4 * c + i):SB * (4 * c + i + 1)], "little")
                               for i in range(4))
            if (t ^ ot) != 1 or (s ^ os_) != 0:
                p.abort("unit-check", f"rotation {rot}: key is not a unit vector at the shared index")
            res.append(D.sketch_residue(pi, bv, d ^ od, e ^ oe, b))
        residues[rot] = res

    # commit, then open the residues
    com = p.sid("dpf-check")
    openings = {}
    for rot, (b, peer, _) in state.items():
        nonce = p.rng.bytes(16)
        body = nonce + b"".join(x.to_bytes(SB, "little") for x in residues[rot])
        openings[rot] = body
        p.send(peer, com, hashlib.sha256(body).digest())
    commits = {rot: p.recv(peer, com) for rot, (b, peer, _) in state.items()}
    opn = p.sid("dpf-check")
    for rot, (b, peer, _) in state.items():
        p.send(peer, opn, openings[rot])
    for rot, (b, peer, _) in state.items():
        body = p.recv(peer, opn)
        if hashlib.sha256(body).digest() != commits[rot]:
            p.abort("dpf-verify", "commitment does not open")
        if body[16:] != openings[rot][16:]:
            p.abort("dpf-verify", f"rotation {rot}: sketch check failed")

    for rot, (b, got) in mine.items():
        for c, (rr, bv, v, blob) in enumerate(got):
            tok = tokens[c][rot]
            tok.key = blob
            tok.u = (v[:, 0] & np.uint64(1)).astype(bool)
            if b == 0:
                tok.rdx0 = rr
            else:
                tok.rdx1 = rr
    return tokens


def dpf_os_select(p: Party, T, idx: RssShare, tokens: list[DpfOsToken]) -> RssShare:
    T = _as_select(T)
    m = len(T)
    lm = domain_bits(m)
    if any(t.used for t in tokens):
        raise TokenReuseError("dpf-os token already spent")
    for t in tokens:
        t.used = True
    if lm == 0:
        return RssShare(T.own[0], T.prev[0], p.id, T.width)
    low = idx.bits(0, lm)
    deltas = []
    for rot in range(3):
        tok = tokens[rot]
        rdx = t2r_convert(tok.rdx0, tok.rdx1, tok.role, p.id, lm)
        deltas.append(rdx ^ low)
    opened = _recon_to_evaluators(p, deltas)
    t = 0
    for rot in range(3):
        tok = tokens[rot]
        if tok.role == 2:
            continue
        sel = np.flatnonzero(tok.u) ^ opened[rot]
        # T_rot is P_rot's own share and P_{rot+1}'s prev share
        t ^= _xor_at(T.own if tok.role == 0 else T.prev, sel)
    return _reshare_word(p, t, T.width)


def _recon_to_evaluators(p: Party, deltas: list[RssShare]) -> dict:
    """Reveal Delta_r to P_r and P_{r+1}, never to the dealer P_{r+2}; one round."""
    sid = p.sid("os-recon")
    lm = deltas[0].width
    nb = B.nbytes(lm)
    m = B.mask(lm)
    to_next, to_prev = [], []
    for rot in range(3):
        role = _rotation_role(p.id, rot)
        d = deltas[rot]
        if role == 0:
            to_next.append(d.prev)
        elif role == 1:
            to_prev.append(d.own)
        else:
            to_next.append(d.prev)
            to_prev.append(d.own)
    for peer, vals in ((p.next, to_next), (p.prev, to_prev)):
        vals = [p.tamper("recon-share", v) & m for v in vals]
        p.send(peer, sid, b"".join(v.to_bytes(nb, "little") for v in vals))
    from_next = B.unpack_words(p.recv(p.next, sid), lm, 2)
    from_prev = B.unpack_words(p.recv(p.prev, sid), lm, 2)
    # what each neighbour sends me, listed in rotation order
    nxt_iter, prv_iter = iter(from_next), iter(from_prev)
    recv_next, recv_prev = {}, {}
    for rot in range(3):
        r_next = _rotation_role(p.next, rot)
        r_prev = _rotation_role(p.prev, rot)
        if r_next in (1, 2):  # next sends to its prev: role 1 and dealer do
            recv_next[rot] = next(nxt_iter)
        if r_prev in (0, 2):  # prev sends to its next: role 0 and dealer do
            recv_prev[rot] = next(prv_iter)
    out = {}
    for rot in range(3):
        role = _rotation_role(p.id, rot)
        if role == 2:
            continue
        a, b = recv_next[rot], recv_prev[rot]
        if a != b:
            p.abort("os-recon", f"rotation {rot}: reconstruction shares disagree")
        d = deltas[rot]
        out[rot] = d.own ^ d.prev ^ a
    return out
