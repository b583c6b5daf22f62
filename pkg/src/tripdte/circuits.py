"""Verified boolean gates on RSS bit sharings.

A triple of group size g is (a, b, c) with a of g bits, b one bit and
c = a AND (b repeated g times).  g = 1 is an ordinary AND triple; larger
groups multiply a word by a bit (MUX) or a feature column by a selector
bit in one go.  Vectors of triples are packed side by side in big ints.

Triples come from `triple_gen` (semi-honest products, then
cut-and-choose: open a random subset, bucket the rest and sacrifice).
`and_verified` spends one triple per AND to check the product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bits as B
from .errors import TokenReuseError
from .rss import Party, RssShare, open_lazy, rand_share, zero_share, coin


@dataclass
class TriplePool:
    group: int
    a_own: int = 0
    a_prev: int = 0
    b_own: int = 0
    b_prev: int = 0
    c_own: int = 0
    c_prev: int = 0
    size: int = 0
    generated: int = 0

    def take(self, n: int, holder: int):
        g = self.group
        ng = n * g
        ma, mb = B.mask(ng), B.mask(n)
        a = RssShare(self.a_own & ma, self.a_prev & ma, holder, ng)
        b = RssShare(self.b_own & mb, self.b_prev & mb, holder, n)
        c = RssShare(self.c_own & ma, self.c_prev & ma, holder, ng)
        self.a_own >>= ng
        self.a_prev >>= ng
        self.c_own >>= ng
        self.c_prev >>= ng
        self.b_own >>= n
        self.b_prev >>= n
        self.size -= n
        return a, b, c

    def add(self, a: RssShare, b: RssShare, c: RssShare, n: int):
        g = self.group
        sg = self.size * g
        self.a_own |= a.own << sg
        self.a_prev |= a.prev << sg
        self.c_own |= c.own << sg
        self.c_prev |= c.prev << sg
        self.b_own |= b.own << self.size
        self.b_prev |= b.prev << self.size
        self.size += n
        self.generated += n


def pool(p: Party, group: int) -> TriplePool:
    if group not in p.pools:
        p.pools[group] = TriplePool(group)
    return p.pools[group]


def units_needed(count: int, bucket: int, open_fraction: float) -> int:
    return math.ceil(bucket * count / (1.0 - open_fraction))


def triple_gen(p: Party, count: int, group: int = 1):
    """Add `count` verified triples of the given group size to the pool."""
    if count <= 0:
        return
    g, Bk = group, p.bucket
    total = units_needed(count, Bk, p.open_fraction)
    n_open = total - Bk * count
    a = rand_share(p, total * g)
    b = rand_share(p, total)
    fb = b.fan(g)
    t = (a.own & (fb.own ^ fb.prev)) ^ (a.prev & fb.own)
    sid = p.sid("triple")
    z = p.tamper("triple-c", t ^ zero_share(p, sid, total * g)) & B.mask(total * g)
    p.send(p.next, sid, z.to_bytes(B.nbytes(total * g), "little"))
    z_prev = int.from_bytes(p.recv(p.prev, sid), "little")
    c = RssShare(z, z_prev, p.id, total * g)

    seed = coin(p, 128)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(total)

    def units(x: RssShare, width: int):
        own = np.take(B.to_bits(x.own, total * width).reshape(total, width), perm, axis=0)
        prev = np.take(B.to_bits(x.prev, total * width).reshape(total, width), perm, axis=0)
        return own, prev

    ao, ap = units(a, g)
    bo, bp = units(b, 1)
    co, cp = units(c, g)

    def share(o, q) -> RssShare:
        return RssShare(B.from_bits(o.reshape(-1)), B.from_bits(q.reshape(-1)), p.id, o.size)

    if n_open:
        sl = slice(0, n_open)
        ng = n_open * g
        both = RssShare.concat([share(ao[sl], ap[sl]), share(co[sl], cp[sl]), share(bo[sl], bp[sl])])
        v = open_lazy(p, both)
        av, cv, bv = v & B.mask(ng), v >> ng & B.mask(ng), v >> 2 * ng
        if cv != av & B.fan(bv, n_open, g):
            p.abort("triple", "opened triple is wrong")

    rest = slice(n_open, total)
    shape_g = (count, Bk, g)
    shape_1 = (count, Bk, 1)
    ao, ap, co, cp = (x[rest].reshape(shape_g) for x in (ao, ap, co, cp))
    bo, bp = (x[rest].reshape(shape_1) for x in (bo, bp))

    out_a = share(ao[:, 0], ap[:, 0])
    out_b = share(bo[:, 0], bp[:, 0])
    out_c = share(co[:, 0], cp[:, 0])
    if Bk > 1:
        # sacrifice unit 0 of every bucket against each other unit
        others = [(share(ao[:, s], ap[:, s]), share(bo[:, s], bp[:, s]), share(co[:, s], cp[:, s]))
                  for s in range(1, Bk)]
        rho_sh = [out_a ^ a2 for a2, _, _ in others]
        sig_sh = [out_b ^ b2 for _, b2, _ in others]
        v = open_lazy(p, RssShare.concat(rho_sh + sig_sh))
        cg = count * g
        rhos = [v >> (i * cg) & B.mask(cg) for i in range(Bk - 1)]
        base = (Bk - 1) * cg
        sigs = [v >> (base + i * count) & B.mask(count) for i in range(Bk - 1)]
        for (a2, b2, c2), rho, sig in zip(others, rhos, sigs):
            fs = B.fan(sig, count, g)
            # c + c' + rho*sigma + rho*b' + sigma*a' = 0 when both are good
            w = (out_c ^ c2 ^ b2.fan(g).and_public(rho) ^ a2.and_public(fs)).add_public(rho & fs)
            p.expect_zero(w)
    pool(p, g).add(out_a, out_b, out_c, count)
    p.verify()


def take_triples(p: Party, n: int, group: int):
    pl = pool(p, group)
    if pl.size < n:
        triple_gen(p, n - pl.size, group)
    return pl.take(n, p.id)


def and_verified(p: Party, x: RssShare, y: RssShare, group: int = 1, defer: bool = True) -> RssShare:
    """x AND fan(y), checked against a verified triple.

    y has n bits and x has n*group bits.  The reshare of the product and
    the masked openings e = x+a, f = y+b travel in one message to the
    next party.  w = e*f + f*a + e*b + c + z must vanish; that test is
    deferred to the next verify() unless defer is False.
    """
    n = y.width
    ng = n * group
    if x.width != ng:
        raise ValueError(f"x has {x.width} bits, expected {ng}")
    a, b, c = take_triples(p, n, group)
    fy = y.fan(group)
    t = (x.own & (fy.own ^ fy.prev)) ^ (x.prev & fy.own)
    sid = p.sid("and")
    mg, mn = B.mask(ng), B.mask(n)
    z_own = p.tamper("mul-reshare", t ^ zero_share(p, sid, ng)) & mg
    e = x ^ a
    f = y ^ b
    e_sent = p.tamper("open-share", e.prev) & mg
    f_sent = p.tamper("open-share", f.prev) & mn
    nb_g, nb_n = B.nbytes(ng), B.nbytes(n)
    p.send(p.next, sid, z_own.to_bytes(nb_g, "little") + e_sent.to_bytes(nb_g, "little")
           + f_sent.to_bytes(nb_n, "little"))
    got = p.recv(p.prev, sid)
    if len(got) != 2 * nb_g + nb_n:
        p.abort("and", "malformed message")
    z_prev = int.from_bytes(got[:nb_g], "little")
    e_in = got[nb_g:2 * nb_g]
    f_in = got[2 * nb_g:]
    p.note_lazy(e.own.to_bytes(nb_g, "little") + f.own.to_bytes(nb_n, "little"), e_in + f_in)
    ev = e.own ^ e.prev ^ int.from_bytes(e_in, "little")
    fv = f.own ^ f.prev ^ int.from_bytes(f_in, "little")
    z = RssShare(z_own, z_prev, p.id, ng)
    ff = B.fan(fv, n, group)
    w = (z ^ c ^ a.and_public(ff) ^ b.fan(group).and_public(ev)).add_public(ev & ff)
    p.expect_zero(w)
    if not defer:
        p.verify()
    return z


def eq_const_many(p: Party, idx: list[RssShare], m: int) -> list[RssShare]:
    """For each shared index (l_m bits) the m-bit indicator vector of its value.

    Bit j of the result is [idx == j].  All comparisons are AND-reduced
    together, one verified AND layer per level of a balanced tree, so the
    total is (l_m - 1) * m ANDs per index.
    """
    lm = max(1, (m - 1).bit_length())
    if m == 1:
        return [RssShare.public(1, p.id, 1) for _ in idx]
    pattern = []
    js = np.arange(m, dtype=np.int64)
    for q in range(lm):
        pattern.append(B.from_bits(((js >> q) & 1).astype(np.uint8)))
    ones = B.mask(m)
    planes = []
    for q in range(lm):
        per = [s.bit(q).fan(m).add_public(pattern[q] ^ ones) for s in idx]
        planes.append(RssShare.concat(per))
    while len(planes) > 1:
        half = len(planes) // 2
        left = RssShare.concat(planes[:half])
        right = RssShare.concat(planes[half:2 * half])
        prod = and_verified(p, left, right)
        width = planes[0].width
        merged = prod.split(width)
        if len(planes) % 2:
            merged.append(planes[-1])
        planes = merged
    return planes[0].split(m)


def eq_test(p: Party, idx: RssShare, j: int) -> RssShare:
    """[idx == j] for a public j."""
    lm = idx.width
    h = idx.add_public(j).invert()  # bit q is 1 where idx and j agree
    acc = h.bit(0)
    for q in range(1, lm):
        acc = and_verified(p, acc, h.bit(q))
    return acc


def _pick(x: RssShare, idxs) -> RssShare:
    """Gather the listed bit positions of x into a fresh share."""
    own = prev = 0
    for i, q in enumerate(idxs):
        own |= (x.own >> q & 1) << i
        prev |= (x.prev >> q & 1) << i
    return RssShare(own, prev, x.holder, len(idxs))


def lt_and_count(k: int) -> int:
    """Verified ANDs used by lt_compare on k-bit words."""
    total, w = k, k
    while w > 1:
        pairs = w // 2
        total += pairs if pairs == 1 and w == 2 else 2 * pairs
        w = pairs + w % 2
    return total


def lt_compare(p: Party, x: RssShare, t: RssShare) -> RssShare:
    """[x < t] for unsigned k-bit words in ceil(log2 k) + 1 AND rounds.

    Per bit, g = (not x) and t says "t wins here" and e = not (x + t)
    says "tie here".  Adjacent segments merge as
    (g, e) = (g_hi + e_hi * g_lo, e_hi * e_lo); g_hi and e_hi * g_lo are
    never both 1, so XOR stands in for OR.  All merges of one level go
    through a single verified AND.
    """
    k = x.width
    g = and_verified(p, x.invert(), t)
    e = (x ^ t).invert()
    w = k
    while w > 1:
        pairs = w // 2
        hi, lo = list(range(1, 2 * pairs, 2)), list(range(0, 2 * pairs, 2))
        e_hi, g_lo, g_hi = _pick(e, hi), _pick(g, lo), _pick(g, hi)
        last = pairs == 1 and w == 2
        if last:
            g = g_hi ^ and_verified(p, e_hi, g_lo)
            break
        prod = and_verified(p, RssShare.concat([e_hi, e_hi]), RssShare.concat([g_lo, _pick(e, lo)]))
        ng = g_hi ^ prod.bits(0, pairs)
        ne = prod.bits(pairs, pairs)
        if w % 2:
            ng = RssShare.concat([ng, g.bit(w - 1)])
            ne = RssShare.concat([ne, e.bit(w - 1)])
        g, e = ng, ne
        w = g.width
    return g


def mux_index(p: Party, b: RssShare, l: RssShare, r: RssShare) -> RssShare:
    """l if b else r, as r + b*(l + r) with one group-k AND."""
    return r ^ and_verified(p, l ^ r, b, group=l.width)


@dataclass
class FeatureMask:
    """Per-query masking of a packed feature vector X (n words of k bits).

    a masks X, e = X + a is public.  For each selection level the pair
    (b, c = a * fan(b)) is a verified product prepared in advance.
    """

    n: int
    k: int
    a: RssShare
    bs: list
    cs: list
    e: int | None = None
    used: int = 0


def prepare_feature_mask(p: Party, n: int, k: int, levels: int) -> FeatureMask:
    a = rand_share(p, n * k)
    if levels == 0:
        return FeatureMask(n, k, a, [], [])
    bs = [rand_share(p, n) for _ in range(levels)]
    c_all = and_verified(p, RssShare.concat([a] * levels), RssShare.concat(bs), group=k)
    cs = c_all.split(n * k)
    return FeatureMask(n, k, a, bs, cs)


def open_feature_mask(p: Party, fm: FeatureMask, X: RssShare):
    fm.e = open_lazy(p, X ^ fm.a)


def inner_product_bits(p: Party, X: RssShare, v: RssShare, fm: FeatureMask | None = None) -> RssShare:
    """XOR over j of X[j] AND v[j]; X packs n words of k bits, v has n bits.

    With a prepared FeatureMask this costs one n-bit lazy opening.
    Without one, a mask is made on the spot.
    """
    n = v.width
    k = X.width // n
    if fm is None:
        fm = prepare_feature_mask(p, n, k, 1)
        open_feature_mask(p, fm, X)
    if fm.e is None:
        open_feature_mask(p, fm, X)
    L = fm.used
    if L >= len(fm.bs):
        raise TokenReuseError(f"feature mask has only {len(fm.bs)} levels")
    fm.used += 1
    b, c = fm.bs[L], fm.cs[L]
    f = open_lazy(p, v ^ b)
    ff = B.fan(f, n, k)
    e = fm.e
    # X*v = e*f + e*b + f*a + a*b
    z = (b.fan(k).and_public(e) ^ fm.a.and_public(ff) ^ c).add_public(e & ff)
    return RssShare(B.fold_xor(z.own, n, k), B.fold_xor(z.prev, n, k), p.id, k)
