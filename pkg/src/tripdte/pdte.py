"""Private decision tree evaluation among three parties.

The model owner (MO) shares the padded node array T once, together with
MAC tags M[j] = alpha * T[j].  Each query then runs a fixed d_pad-step
loop: select the feature, compare with the threshold, pick the child
index, and obliviously read T[idx] || M[idx].  The d_pad selected
node/tag pairs are MAC-checked and all deferred multiplication checks
are flushed before the label is reconstructed towards the feature
owner (FO).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import bits as B
from .circuits import (FeatureMask, inner_product_bits, lt_and_count, lt_compare, mux_index, open_feature_mask,
                       prepare_feature_mask, triple_gen, pool)
from .errors import ConfigError
from .gf2 import FieldCtx, field as gf_field
from .mac import MacKey, mac_attach, mac_check, mac_keygen
from .oselect import SelectArray, domain_bits, dpf_os_preprocess, dpf_os_select, rss_os_preprocess, rss_os_select
from .prf import Prf
from .rss import Party, RssShare, RssVector, load_shares, recon, save_shares, share_input
from .tree import TreeArray

OS_KINDS = ("rss", "dpf")


@dataclass(frozen=True)
class PdteParams:
    """Public parameters all three parties must agree on."""

    k: int
    n: int
    m: int
    d_pad: int
    os_kind: str = "dpf"
    mo: int = 0
    fo: int = 1

    def __post_init__(self):
        if self.os_kind not in OS_KINDS:
            raise ConfigError(f"unknown OS kind {self.os_kind!r}")
        if self.k < 1 or self.n < 1 or self.d_pad < 0:
            raise ConfigError("k, n must be positive and d_pad non-negative")
        if self.m < 1 or self.m & (self.m - 1):
            raise ConfigError("m must be a power of two")
        if self.m > 1 << self.k:
            raise ConfigError(f"m = {self.m} does not fit {self.k}-bit indices")
        if self.mo == self.fo or not {self.mo, self.fo} <= {0, 1, 2}:
            raise ConfigError("model owner and feature owner must be distinct parties")

    @property
    def ell(self) -> int:
        return 4 * self.k + self.n

    @property
    def lm(self) -> int:
        return domain_bits(self.m)

    @classmethod
    def for_tree(cls, arr: TreeArray, os_kind: str = "dpf", d_pad: Optional[int] = None, **kw) -> "PdteParams":
        return cls(arr.k, arr.n, arr.m, arr.d_pad if d_pad is None else d_pad, os_kind, **kw)

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(b"pdte-params" + blob).digest()


@dataclass
class SetupState:
    params: PdteParams
    ctx: FieldCtx
    T: SelectArray  # node || tag, width 2*ell
    key: MacKey


@dataclass
class QueryMaterial:
    """Everything one query consumes, prepared in the os-preprocess phase."""

    fm: FeatureMask
    tokens: list
    used: bool = False


def _node_fields(node: RssShare, k: int, n: int) -> dict:
    return {
        "c": node.bits(0, k),
        "v": node.bits(k, n),
        "r": node.bits(k + n, k),
        "l": node.bits(2 * k + n, k),
        "t": node.bits(3 * k + n, k),
    }


def exchange_params(p: Party, k: int, os_kind: str, arr=None, params: Optional[PdteParams] = None,
                    queries: int = 0, mo: int = 0, fo: int = 1) -> tuple[PdteParams, int]:
    """Agree on the public parameters; returns them and the query count.

    The model owner announces the tree shape (m, n, d_pad) unless the
    parameters come from a saved state.  Every party then sends the hash
    of its parameters to both others; any difference refuses the run.
    """
    others = [j for j in range(3) if j != p.id]
    if params is None:
        sid = p.sid("params")
        if p.id == mo:
            if arr is None:
                raise ConfigError("the model owner needs the tree")
            if arr.k != k:
                raise ConfigError(f"the tree uses k = {arr.k}, configured k = {k}")
            shape = struct.pack("<QQQ", arr.m, arr.n, arr.d_pad)
            for j in others:
                p.send(j, sid, shape)
            m, n, d_pad = arr.m, arr.n, arr.d_pad
        else:
            m, n, d_pad = struct.unpack("<QQQ", p.recv(mo, sid))
        params = PdteParams(k, n, m, d_pad, os_kind, mo, fo)
    sid = p.sid("params")
    mine = params.digest() + struct.pack("<Q", queries if p.id == fo else 0)
    for j in others:
        p.send(j, sid, mine)
    nq = queries
    for j in others:
        theirs = p.recv(j, sid)
        if theirs[:32] != params.digest():
            raise ConfigError(f"parameter handshake failed: P{j} runs different parameters")
        if j == fo:
            nq = struct.unpack("<Q", theirs[32:40])[0]
    return params, nq


def pdte_setup(p: Party, params: PdteParams, arr: Optional[TreeArray] = None) -> SetupState:
    """Share T from the model owner, attach MACs and check them."""
    ctx = gf_field(params.ell)
    ell, m = params.ell, params.m
    with p.phase("setup"):
        if p.k_own is None:
            p.setup_keys()
        if p.id == params.mo:
            if arr is None:
                raise ConfigError("the model owner needs the tree")
            if (arr.m, arr.k, arr.n) != (m, params.k, params.n):
                raise ConfigError("tree shape does not match the parameters")
            vals = arr.packed()
        else:
            vals = None
        T = share_input(p, vals, params.mo, ell, m)
        key = mac_keygen(p, ctx)
        M = mac_attach(p, T, key, ctx)
        mac_check(p, T, M, key, ctx)
        p.verify()
    combined = RssVector([t.own | (s.own << ell) for t, s in zip(T, M)],
                         [t.prev | (s.prev << ell) for t, s in zip(T, M)], p.id, 2 * ell)
    return SetupState(params, ctx, SelectArray(combined), key)


def pdte_preprocess(p: Party, st: SetupState, queries: int = 1) -> list[QueryMaterial]:
    """OS tokens, feature masks and verified triples for `queries` queries."""
    pr = st.params
    d, k, n = pr.d_pad, pr.k, pr.n
    with p.phase("os-preprocess"):
        if pr.os_kind == "rss":
            toks = rss_os_preprocess(p, pr.m, d * queries)
        else:
            toks = dpf_os_preprocess(p, pr.m, d * queries)
        # verified triples: comparisons use group 1; the child mux and the
        # feature masks use group k (one unit per mux, n per mask level)
        for group, need in ((1, lt_and_count(k) * d * queries), (k, (n + 1) * d * queries)):
            short = need - pool(p, group).size
            if short > 0:
                triple_gen(p, short, group)
        fms = [prepare_feature_mask(p, n, k, d) for _ in range(queries)]
        p.verify()
    return [QueryMaterial(fm, toks[q * d:(q + 1) * d]) for q, fm in enumerate(fms)]


def pdte_eval(p: Party, st: SetupState, qm: QueryMaterial, x=None) -> Optional[int]:
    """One query.  Returns the label at the feature owner, None elsewhere."""
    pr = st.params
    k, n, ell = pr.k, pr.n, pr.ell
    if qm.used:
        raise ConfigError("query material already used")
    qm.used = True
    if p.id == pr.fo:
        if x is None or len(x) != n:
            raise ConfigError(f"feature vector must have {n} entries")
        if any(not 0 <= v < 1 << k for v in x):
            raise ConfigError(f"feature values must be {k}-bit unsigned")
    select = rss_os_select if pr.os_kind == "rss" else dpf_os_select
    with p.phase("online"):
        X = share_input(p, B.concat(x, k) if p.id == pr.fo else None, pr.fo, n * k)
        open_feature_mask(p, qm.fm, X)
        root = RssShare(st.T.own[0], st.T.prev[0], p.id, 2 * ell)
        result = root.bits(0, k)
        nodes, tags = [], []
        node = root.bits(0, ell)
        for level in range(pr.d_pad):
            f = _node_fields(node, k, n)
            xv = inner_product_bits(p, X, f["v"], qm.fm)
            b = lt_compare(p, xv, f["t"])
            idx = mux_index(p, b, f["l"], f["r"])
            sel = select(p, st.T, idx, qm.tokens[level])
            node = sel.bits(0, ell)
            nodes.append(node)
            tags.append(sel.bits(ell, ell))
            result = node.bits(0, k)
        # no release before every check has passed
        mac_check(p, nodes, tags, st.key, st.ctx)
        p.verify()
        return recon(p, result, pr.fo, site="result", tag="result")


def run_party(p: Party, params: PdteParams, arr: Optional[TreeArray], queries: list) -> list:
    """Setup, preprocessing and all queries for one party; labels at FO.

    Every party passes a list of the same length; only FO's entries are read.
    """
    agreed, _ = exchange_params(p, params.k, params.os_kind, arr, queries=len(queries),
                                mo=params.mo, fo=params.fo)
    if agreed != params:
        raise ConfigError("the tree does not match the parameters")
    st = pdte_setup(p, params, arr)
    mats = pdte_preprocess(p, st, len(queries))
    return [pdte_eval(p, st, qm, x) for qm, x in zip(mats, queries)]


# --- persistence between `setup` and `eval` invocations -----------------------
def save_state(path, p: Party, st: SetupState):
    extra = json.dumps({
        "params": asdict(st.params),
        "alpha": [st.key.alpha.own, st.key.alpha.prev],
        "prf": [p.k_own.key.hex(), p.k_prev.key.hex()],
        "party": p.id,
    }).encode()
    save_shares(path, st.T.vec, extra)


def load_state(path, p: Party) -> SetupState:
    vec, extra = load_shares(path)
    meta = json.loads(extra)
    if meta["party"] != p.id:
        raise ConfigError(f"state file belongs to P{meta['party']}, not P{p.id}")
    params = PdteParams(**meta["params"])
    ctx = gf_field(params.ell)
    p.k_own = Prf(bytes.fromhex(meta["prf"][0]))
    p.k_prev = Prf(bytes.fromhex(meta["prf"][1]))
    a_own, a_prev = meta["alpha"]
    key = MacKey(RssShare(a_own, a_prev, p.id, params.ell))
    return SetupState(params, ctx, SelectArray(vec), key)
