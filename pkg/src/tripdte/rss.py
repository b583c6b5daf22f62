"""(3,2) replicated secret sharing and its base protocols.

Party i holds (x_i, x_{i-1}) where x = x_0 ^ x_1 ^ x_2.  Everything is
characteristic 2, so every +/- in the usual formulas is XOR.

A `Party` bundles one endpoint, PRF keys, local randomness and the
bookkeeping for deferred checks.  All three parties must call the same
sequence of protocol functions; session ids are allocated in that order.

Two kinds of opening are used:

* `open_values` cross-checks immediately (each party receives the
  missing share from both neighbours).
* `open_lazy` sends a single copy to the next party and folds the
  values into running hashes; `Party.verify()` compares the hashes
  later.  Masked values in multiplication checks use this, as do
  hash-based zero tests (`Party.expect_zero`).
"""
from __future__ import annotations

import contextlib
import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from . import bits as B
from .errors import ProtocolAbort
from .gf2 import FieldCtx
from .prf import Prf, Prg, derive_key
from .transport import Endpoint, SessionId, TAG_IDS, next_party, prev_party


@dataclass(frozen=True)
class RssShare:
    own: int
    prev: int
    holder: int
    width: int

    def __xor__(self, other: "RssShare") -> "RssShare":
        if other.width != self.width:
            raise ValueError(f"width mismatch {self.width} vs {other.width}")
        return RssShare(self.own ^ other.own, self.prev ^ other.prev, self.holder, self.width)

    __add__ = __xor__

    def add_public(self, v: int) -> "RssShare":
        """Add a public constant, shared as (0, 0, v)."""
        own, prev = self.own, self.prev
        if self.holder == 2:
            own ^= v
        elif self.holder == 0:
            prev ^= v
        return RssShare(own, prev, self.holder, self.width)

    def invert(self) -> "RssShare":
        return self.add_public(B.mask(self.width))

    def and_public(self, m: int) -> "RssShare":
        return RssShare(self.own & m, self.prev & m, self.holder, self.width)

    def scale(self, times: Callable[[int], int]) -> "RssShare":
        return RssShare(times(self.own), times(self.prev), self.holder, self.width)

    def bits(self, lo: int, n: int) -> "RssShare":
        m = B.mask(n)
        return RssShare(self.own >> lo & m, self.prev >> lo & m, self.holder, n)

    def bit(self, i: int) -> "RssShare":
        return RssShare(self.own >> i & 1, self.prev >> i & 1, self.holder, 1)

    def fan(self, group: int) -> "RssShare":
        if group == 1:
            return self
        return RssShare(B.fan(self.own, self.width, group), B.fan(self.prev, self.width, group),
                        self.holder, self.width * group)

    def split(self, width: int) -> list["RssShare"]:
        count = self.width // width
        owns = B.split(self.own, width, count)
        prevs = B.split(self.prev, width, count)
        return [RssShare(o, p, self.holder, width) for o, p in zip(owns, prevs)]

    @staticmethod
    def concat(parts: Sequence["RssShare"]) -> "RssShare":
        """parts[0] lands in the low bits."""
        own = prev = 0
        shift = 0
        for s in parts:
            own |= s.own << shift
            prev |= s.prev << shift
            shift += s.width
        return RssShare(own, prev, parts[0].holder, shift)

    @staticmethod
    def public(v: int, holder: int, width: int) -> "RssShare":
        return RssShare(0, 0, holder, width).add_public(v)


@dataclass
class RssVector:
    """Shares of an array of width-bit words, stored column-wise."""

    own: list
    prev: list
    holder: int
    width: int

    def __len__(self):
        return len(self.own)

    def __getitem__(self, j: int) -> RssShare:
        return RssShare(self.own[j], self.prev[j], self.holder, self.width)

    @classmethod
    def from_shares(cls, shares: Sequence[RssShare]) -> "RssVector":
        return cls([s.own for s in shares], [s.prev for s in shares], shares[0].holder, shares[0].width)

    def shares(self) -> list[RssShare]:
        return [self[j] for j in range(len(self))]


@dataclass(frozen=True)
class TwoShare:
    value: int
    holder: int
    peer: int
    width: int


class Adversary:
    """Honest behaviour; subclasses override `tamper` for one site."""

    def tamper(self, site: str, value):
        return value


def _sid_nonce(sid: SessionId, sub: int = 0) -> bytes:
    return struct.pack("<HQH", TAG_IDS[sid.tag], sid.counter, sub)


class Party:
    def __init__(self, pid: int, endpoint: Endpoint, seed=0, adversary: Optional[Adversary] = None,
                 bucket: int = 3, open_fraction: float = 0.25):
        self.id = pid
        self.ep = endpoint
        self.next = next_party(pid)
        self.prev = prev_party(pid)
        self.rng = Prg(derive_key(b"party", seed, pid))
        self.adv = adversary or Adversary()
        self.bucket = bucket
        self.open_fraction = open_fraction
        self._counters: dict[str, int] = {}
        self.k_own: Optional[Prf] = None
        self.k_prev: Optional[Prf] = None
        self.pools: dict = {}
        self._reset_checks()

    # --- bookkeeping -------------------------------------------------
    def sid(self, tag: str) -> SessionId:
        c = self._counters.get(tag, 0)
        self._counters[tag] = c + 1
        return SessionId(tag, c)

    @contextlib.contextmanager
    def phase(self, name: str):
        old = self.ep.phase
        self.ep.phase = name
        try:
            yield
        except ProtocolAbort as exc:
            if exc.phase is None:
                exc.phase = name
            raise
        finally:
            self.ep.phase = old

    def tamper(self, site: str, value):
        return self.adv.tamper(site, value)

    def send(self, to: int, sid: SessionId, payload: bytes):
        self.ep.send(to, sid, payload)

    def recv(self, frm: int, sid: SessionId) -> bytes:
        return self.ep.recv(frm, sid)

    def abort(self, site: str, reason: str = ""):
        raise ProtocolAbort(site, f"P{self.id}: {reason}" if reason else f"P{self.id}")

    def _reset_checks(self):
        self._lazy_own = hashlib.sha256()
        self._lazy_recv = hashlib.sha256()
        self._zero_out = hashlib.sha256()
        self._zero_exp = hashlib.sha256()
        self._dirty = False

    def note_lazy(self, own: bytes, received: bytes):
        self._lazy_own.update(own)
        self._lazy_recv.update(received)
        self._dirty = True

    def expect_zero(self, x: RssShare):
        """Defer the test x == 0 to the next verify()."""
        nb = B.nbytes(x.width)
        self._zero_out.update((x.own ^ x.prev).to_bytes(nb, "little"))
        self._zero_exp.update(x.own.to_bytes(nb, "little"))
        self._dirty = True

    @property
    def has_pending_checks(self) -> bool:
        return self._dirty

    def verify(self):
        """Flush deferred consistency and zero checks (two digests per party)."""
        if not self._dirty:
            return
        sid = self.sid("verify")
        self.send(self.prev, sid, self._lazy_own.digest())
        self.send(self.next, sid, self._zero_out.digest())
        lazy_ref = self.recv(self.next, sid)
        zero_ref = self.recv(self.prev, sid)
        ok_lazy = lazy_ref == self._lazy_recv.digest()
        ok_zero = zero_ref == self._zero_exp.digest()
        self._reset_checks()
        if not ok_lazy:
            self.abort("verify", "opened values inconsistent")
        if not ok_zero:
            self.abort("verify", "multiplication check failed")

    # --- randomness --------------------------------------------------
    def setup_keys(self):
        """Sample k_i, hand it to P_{i+1}; receive k_{i-1}."""
        sid = self.sid("prf-keys")
        mine = self.rng.bytes(16)
        self.send(self.next, sid, mine)
        theirs = self.recv(self.prev, sid)
        if len(theirs) != 16:
            self.abort("prf-keys", "bad key length")
        self.k_own = Prf(mine)
        self.k_prev = Prf(theirs)


# --- non-interactive randomness ------------------------------------------
def rand_share(p: Party, width: int) -> RssShare:
    n = _sid_nonce(p.sid("rand"))
    return RssShare(p.k_own.bits(n, width), p.k_prev.bits(n, width), p.id, width)


def rand_many(p: Party, width: int, count: int) -> list[RssShare]:
    n = _sid_nonce(p.sid("rand"))
    owns = p.k_own.words(n, width, count)
    prevs = p.k_prev.words(n, width, count)
    pid = p.id
    return [RssShare(o, q, pid, width) for o, q in zip(owns, prevs)]


def zero_share(p: Party, sid: SessionId, width: int, sub: int = 0) -> int:
    """This party's piece of a three-way XOR sharing of zero."""
    n = _sid_nonce(sid, sub)
    return p.k_own.bits(n, width) ^ p.k_prev.bits(n, width)


def zero_many(p: Party, sid: SessionId, width: int, count: int, sub: int = 0) -> list[int]:
    n = _sid_nonce(sid, sub)
    return [a ^ b for a, b in zip(p.k_own.words(n, width, count), p.k_prev.words(n, width, count))]


# --- openings -------------------------------------------------------------
def _as_list(x):
    return (x, False) if isinstance(x, (list, tuple)) else ([x], True)


def open_values(p: Party, x, site: str = "open"):
    """Open to everyone with immediate cross-check.  Accepts a share or a list."""
    xs, single = _as_list(x)
    if not xs:
        return []
    w = xs[0].width
    sid = p.sid("open")
    p.send(p.prev, sid, B.pack_words([s.own for s in xs], w))
    sent_prev = [p.tamper("open-share", s.prev) & B.mask(w) for s in xs]
    p.send(p.next, sid, B.pack_words(sent_prev, w))
    from_next = p.recv(p.next, sid)
    from_prev = p.recv(p.prev, sid)
    if from_next != from_prev:
        p.abort(site, "open shares disagree")
    missing = B.unpack_words(from_next, w, len(xs))
    out = [s.own ^ s.prev ^ m for s, m in zip(xs, missing)]
    return out[0] if single else out


def open_lazy(p: Party, x, tag: str = "lazy-open"):
    """Open with one message per party; consistency is checked at verify()."""
    xs, single = _as_list(x)
    w = xs[0].width
    sid = p.sid(tag)
    own = B.pack_words([s.own for s in xs], w)
    sent = [p.tamper("open-share", s.prev) & B.mask(w) for s in xs]
    p.send(p.next, sid, B.pack_words(sent, w))
    got = p.recv(p.prev, sid)
    p.note_lazy(own, got)
    missing = B.unpack_words(got, w, len(xs))
    out = [s.own ^ s.prev ^ m for s, m in zip(xs, missing)]
    return out[0] if single else out


def coin(p: Party, width: int) -> int:
    return open_values(p, rand_share(p, width), site="coin")


def recon(p: Party, x, to: int, site: str = "recon", tag: str = "recon"):
    """Reveal x to party `to` only.  Returns the value there, None elsewhere."""
    xs, single = _as_list(x)
    w = xs[0].width
    sid = p.sid(tag)
    m = B.mask(w)
    if p.id == next_party(to):
        p.send(to, sid, B.pack_words([p.tamper("recon-share", s.own) & m for s in xs], w))
    elif p.id == prev_party(to):
        p.send(to, sid, B.pack_words([p.tamper("recon-share", s.prev) & m for s in xs], w))
    else:
        a = p.recv(p.next, sid)
        b = p.recv(p.prev, sid)
        if a != b:
            p.abort(site, "reconstruction shares disagree")
        missing = B.unpack_words(a, w, len(xs))
        out = [s.own ^ s.prev ^ q for s, q in zip(xs, missing)]
        return out[0] if single else out
    return None


def recon_pair(p: Party, x: RssShare, targets: tuple[int, int], site: str = "recon") -> Optional[int]:
    """Reveal x to two parties in one round; the third party receives nothing."""
    sid = p.sid("os-recon")
    w, m = x.width, B.mask(x.width)
    out = None
    for t in targets:
        if p.id == next_party(t):
            p.send(t, sid, (p.tamper("recon-share", x.own) & m).to_bytes(B.nbytes(w), "little"))
        elif p.id == prev_party(t):
            p.send(t, sid, (p.tamper("recon-share", x.prev) & m).to_bytes(B.nbytes(w), "little"))
    if p.id in targets:
        a = p.recv(p.next, sid)
        b = p.recv(p.prev, sid)
        if a != b:
            p.abort(site, "reconstruction shares disagree")
        out = x.own ^ x.prev ^ int.from_bytes(a, "little")
    return out


def share_input(p: Party, values, dealer: int, width: int, count: Optional[int] = None):
    """Dealer inputs values (a list, or one int when count is None)."""
    single = count is None
    n = 1 if single else count
    r = rand_many(p, width, n)
    rv = recon(p, r, dealer, site="share")
    sid = p.sid("share")
    if p.id == dealer:
        vals = [values] if single else list(values)
        if len(vals) != n:
            raise ValueError("wrong number of input values")
        delta = [v ^ q for v, q in zip(vals, rv)]
        payload = B.pack_words(delta, width)
        p.send(p.prev, sid, payload)
        bad = [p.tamper("share-delta", d) & B.mask(width) for d in delta]
        p.send(p.next, sid, B.pack_words(bad, width) if bad != delta else payload)
    else:
        payload = p.recv(dealer, sid)
        other = p.next if p.next != dealer else p.prev
        chk = p.sid("share-check")
        p.send(other, chk, hashlib.sha256(payload).digest())
        if p.recv(other, chk) != hashlib.sha256(payload).digest():
            p.abort("share", "dealer sent inconsistent deltas")
        delta = B.unpack_words(payload, width, n)
    if p.id == dealer:
        # the two others run a check round; the dealer only allocates the sid
        p.sid("share-check")
    out = [s.add_public(d) for s, d in zip(r, delta)]
    return out[0] if single else out


# --- multiplication -------------------------------------------------------
def _reshare(p: Party, t: list[int], width: int, site: str) -> list[RssShare]:
    sid = p.sid("mul")
    zs = zero_many(p, sid, width, len(t))
    m = B.mask(width)
    z = [p.tamper(site, a ^ b) & m for a, b in zip(t, zs)]
    p.send(p.next, sid, B.pack_words(z, width))
    got = B.unpack_words(p.recv(p.prev, sid), width, len(t))
    return [RssShare(a, b, p.id, width) for a, b in zip(z, got)]


def mul_semi(p: Party, x, y, ctx: Optional[FieldCtx] = None, site: str = "mul-reshare"):
    """Product up to an additive error.  Bitwise AND unless ctx is given."""
    xs, single = _as_list(x)
    ys, _ = _as_list(y)
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    if not xs:
        return []
    w = xs[0].width
    if ctx is None:
        t = [(a.own & (b.own ^ b.prev)) ^ (a.prev & b.own) for a, b in zip(xs, ys)]
    else:
        mul = ctx.mul
        t = [mul(a.own, b.own ^ b.prev) ^ mul(a.prev, b.own) for a, b in zip(xs, ys)]
    out = _reshare(p, t, w, site)
    return out[0] if single else out


def mul_by_shared_scalar(p: Party, alpha: RssShare, xs: RssVector | Sequence[RssShare], ctx: FieldCtx,
                         site: str = "mul-reshare") -> list[RssShare]:
    """alpha * x_j for every j, reusing alpha's multiplication tables."""
    if isinstance(xs, RssVector):
        owns, prevs = xs.own, xs.prev
    else:
        owns, prevs = [s.own for s in xs], [s.prev for s in xs]
    if not owns:
        return []
    a_own = ctx.scaler(alpha.own)
    a_both = ctx.scaler(alpha.own ^ alpha.prev)
    # x_i a_i + x_{i-1} a_i + x_i a_{i-1} = a_i x_{i-1} + (a_i + a_{i-1}) x_i
    t = [a_own(q) ^ a_both(o) for o, q in zip(owns, prevs)]
    return _reshare(p, t, ctx.ell, site)


def check_zero(p: Party, x, ctx: FieldCtx) -> bool:
    """True iff every x is zero (up to 1/(|F|-1)); masks with a fresh random r."""
    xs, _ = _as_list(x)
    if not xs:
        return True
    r = rand_many(p, ctx.ell, len(xs))
    w = mul_semi(p, xs, r, ctx=ctx, site="mul-reshare")
    try:
        vals = open_values(p, w, site="check-zero")
    except ProtocolAbort:
        return False
    return all(v == 0 for v in vals)


def t2r_convert(x0: Optional[int], x1: Optional[int], role: int, holder: int, width: int) -> RssShare:
    """Lift a dealer-issued two-party sharing to RSS without interaction.

    role 0 holds x0, role 1 holds x1, role 2 is the dealer and knows both.
    """
    if role == 0:
        return RssShare(0, x0, holder, width)
    if role == 1:
        return RssShare(x1, 0, holder, width)
    return RssShare(x0, x1, holder, width)


# --- share files ----------------------------------------------------------
SHARE_MAGIC = b"RSSF"
SHARE_VERSION = 1


def save_shares(path, vec: RssVector, extra: bytes = b""):
    w = vec.width
    hdr = SHARE_MAGIC + struct.pack("<HIIBI", SHARE_VERSION, w, len(vec), vec.holder, len(extra))
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(extra)
        fh.write(B.pack_words(vec.own, w))
        fh.write(B.pack_words(vec.prev, w))


def load_shares(path) -> tuple[RssVector, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SHARE_MAGIC:
        raise ValueError("not a share file")
    version, w, m, holder, nextra = struct.unpack_from("<HIIBI", data, 4)
    if version != SHARE_VERSION:
        raise ValueError(f"unsupported share file version {version}")
    off = 4 + struct.calcsize("<HIIBI")
    extra = data[off:off + nextra]
    off += nextra
    nb = B.nbytes(w) * m
    if len(data) != off + 2 * nb:
        raise ValueError("share file truncated")
    own = B.unpack_words(data[off:off + nb], w, m)
    prev = B.unpack_words(data[off + nb:], w, m)
    return RssVector(own, prev, holder, w), extra
