"""Information-theoretic MACs sigma = alpha * x over F_{2^l} and the batched check."""
from __future__ import annotations

from dataclasses import dataclass

from .gf2 import FieldCtx
from .prf import Prg, derive_key
from .rss import (Party, RssShare, RssVector, check_zero, coin, mul_by_shared_scalar, open_values,
                  rand_share)


@dataclass
class MacKey:
    alpha: RssShare


@dataclass
class AuthPair:
    x: RssShare
    sigma: RssShare


def mac_keygen(p: Party, ctx: FieldCtx) -> MacKey:
    return MacKey(rand_share(p, ctx.ell))


def mac_attach(p: Party, xs, key: MacKey, ctx: FieldCtx) -> list[RssShare]:
    """sigma_j = alpha * x_j for every j (one reshare message for the batch)."""
    return mul_by_shared_scalar(p, key.alpha, xs, ctx, site="mac-attach")


def mac_coins(seed: int, ctx: FieldCtx, count: int) -> list[int]:
    """Nonzero field elements; a zero draw is replaced by the next one."""
    rng = Prg(derive_key(b"mac-coins", seed))
    out = []
    while len(out) < count:
        for w in rng.words(ctx.ell, count - len(out)):
            if w:
                out.append(w)
    return out


def _combine(ctx: FieldCtx, rhos, owns, prevs):
    # unreduced accumulation, one reduction at the end
    from .gf2 import clmul
    acc_o = acc_p = 0
    for r, o, q in zip(rhos, owns, prevs):
        acc_o ^= clmul(r, o)
        acc_p ^= clmul(r, q)
    return ctx.reduce(acc_o), ctx.reduce(acc_p)


def _columns(xs):
    if isinstance(xs, RssVector):
        return xs.own, xs.prev
    return [s.own for s in xs], [s.prev for s in xs]


def mac_check(p: Party, xs, sigmas, key: MacKey, ctx: FieldCtx):
    """Abort unless sigma_j = alpha * x_j for all j (up to 1/(2^l - 1))."""
    xo, xp = _columns(xs)
    so, sp = _columns(sigmas)
    if len(xo) != len(so):
        raise ValueError("values and tags differ in length")
    r = rand_share(p, ctx.ell)
    sr = mul_by_shared_scalar(p, key.alpha, [r], ctx, site="mul-reshare")[0]
    rhos = mac_coins(coin(p, 128), ctx, len(xo))
    vo, vp = _combine(ctx, rhos, xo, xp)
    wo, wp = _combine(ctx, rhos, so, sp)
    v = r ^ RssShare(vo, vp, p.id, ctx.ell)
    w = sr ^ RssShare(wo, wp, p.id, ctx.ell)
    vv = open_values(p, v, site="mac-check")
    times_v = ctx.scaler(vv)
    if not check_zero(p, w ^ key.alpha.scale(times_v), ctx):
        p.abort("mac-check", "tag mismatch")
