"""Decision trees as flat arrays of packed nodes.

A node packs t || l || r || v || c into l = 4k + n bits, threshold t in
the most significant bits and label c in the least.  Leaves point both
children at themselves and carry v = 0, so an evaluation loop of fixed
length stays on a leaf once it gets there.

Text model format (version 1):

    tree v1
    k 16
    n 4
    d_pad 6          (optional)
    node <id> <t> <l> <r> <feature_id> <label>
    ...

feature_id is -1 for leaves (t, l, r are then ignored).  The root is
the node no other node points to.  Thresholds are unsigned; x goes left
when x < t.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import ConfigError
from .prf import Prg


# --- logical trees -----------------------------------------------------------
@dataclass
class Leaf:
    label: int


@dataclass
class Split:
    feature: int
    threshold: int
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def evaluate(node: Node, x) -> int:
    while isinstance(node, Split):
        node = node.left if x[node.feature] < node.threshold else node.right
    return node.label


def depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(depth(node.left), depth(node.right))


def count_nodes(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + count_nodes(node.left) + count_nodes(node.right)


# --- array form --------------------------------------------------------------
@dataclass(frozen=True)
class TreeNode:
    t: int
    l: int
    r: int
    v: int
    c: int


@dataclass
class TreeArray:
    nodes: list
    k: int
    n: int
    depth: int
    d_pad: int

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def ell(self) -> int:
        return 4 * self.k + self.n

    @property
    def lm(self) -> int:
        return max(0, (self.m - 1).bit_length())

    def packed(self) -> list[int]:
        return [pack_node(nd, self.k, self.n) for nd in self.nodes]


def pack_node(nd: TreeNode, k: int, n: int) -> int:
    return ((((nd.t << k | nd.l) << k | nd.r) << n | nd.v) << k) | nd.c


def unpack_node(x: int, k: int, n: int) -> TreeNode:
    mk, mn = (1 << k) - 1, (1 << n) - 1
    c = x & mk
    x >>= k
    v = x & mn
    x >>= n
    r = x & mk
    x >>= k
    l = x & mk
    x >>= k
    return TreeNode(x & mk, l, r, v, c)


def field_offsets(k: int, n: int) -> dict:
    """Bit offset and width of each packed field."""
    return {"c": (0, k), "v": (k, n), "r": (k + n, k), "l": (2 * k + n, k), "t": (3 * k + n, k)}


def encode_tree(root: Node, k: int, n: int, d_pad: Optional[int] = None) -> TreeArray:
    """Breadth-first layout, root at index 0, leaves self-looped."""
    order, index = [], {}
    q = deque([root])
    while q:
        nd = q.popleft()
        index[id(nd)] = len(order)
        order.append(nd)
        if isinstance(nd, Split):
            q.append(nd.left)
            q.append(nd.right)
    if len(order) > (1 << k):
        raise ConfigError(f"{len(order)} nodes do not fit {k}-bit child indices")
    lim = (1 << k) - 1
    nodes = []
    for i, nd in enumerate(order):
        if isinstance(nd, Leaf):
            if not 0 <= nd.label <= lim:
                raise ConfigError(f"label {nd.label} does not fit in {k} bits")
            nodes.append(TreeNode(0, i, i, 0, nd.label))
        else:
            if not 0 <= nd.feature < n:
                raise ConfigError(f"node {i}: feature id {nd.feature} outside [0, {n})")
            if not 0 <= nd.threshold <= lim:
                raise ConfigError(f"node {i}: threshold {nd.threshold} does not fit in {k} bits")
            nodes.append(TreeNode(nd.threshold, index[id(nd.left)], index[id(nd.right)], 1 << nd.feature, 0))
    d = depth(root)
    return TreeArray(nodes, k, n, d, d if d_pad is None else max(d, d_pad))


def pad_size(m: int) -> int:
    return 1 << max(0, (m - 1).bit_length())


def pad_tree(arr: TreeArray, rng) -> TreeArray:
    """Scatter nodes over a power-of-two array; fill the gaps with dummy leaves.

    The root stays at 0.  `rng` is a random.Random, a Prg, or an int seed.
    """
    m = arr.m
    mp = pad_size(m)
    if mp > (1 << arr.k):
        raise ConfigError(f"padded size {mp} does not fit {arr.k}-bit indices")
    if isinstance(rng, int):
        rng = random.Random(rng)
    if isinstance(rng, Prg):
        slots = list(range(1, mp))
        for i in range(len(slots) - 1, 0, -1):
            j = rng.randbelow(i + 1)
            slots[i], slots[j] = slots[j], slots[i]
    else:
        slots = rng.sample(range(1, mp), mp - 1)
    where = [0] + slots[:m - 1]
    out: list = [None] * mp
    for old, nd in enumerate(arr.nodes):
        new = where[old]
        if nd.v == 0 and nd.l == old and nd.r == old:
            out[new] = TreeNode(0, new, new, 0, nd.c)
        else:
            out[new] = TreeNode(nd.t, where[nd.l], where[nd.r], nd.v, nd.c)
    for j in range(mp):
        if out[j] is None:
            out[j] = TreeNode(0, j, j, 0, 0)
    return TreeArray(out, arr.k, arr.n, arr.depth, arr.d_pad)


def plaintext_dte(arr: TreeArray, x, steps: Optional[int] = None) -> int:
    """The fixed-length loop the protocol runs, in the clear."""
    nodes = arr.nodes
    idx = 0
    result = nodes[0].c
    for _ in range(arr.d_pad if steps is None else steps):
        nd = nodes[idx]
        val = 0
        if nd.v:
            val = x[nd.v.bit_length() - 1]
        idx = nd.l if val < nd.t else nd.r
        result = nodes[idx].c
    return result


def validate(arr: TreeArray):
    m = arr.m
    if m & (m - 1):
        raise ConfigError("array length is not a power of two")
    for i, nd in enumerate(arr.nodes):
        if nd.l >= m or nd.r >= m:
            raise ConfigError(f"node {i}: child index out of range")
        if nd.v and nd.v & (nd.v - 1):
            raise ConfigError(f"node {i}: feature selector is not a unit vector")
        if not nd.v and (nd.l != i or nd.r != i):
            raise ConfigError(f"node {i}: leaf is not self-looped")


# --- random trees --------------------------------------------------------------
def random_tree(m: int, d: int, n: int, k: int, rng: random.Random) -> Node:
    """A random binary tree with m nodes (m odd) and depth exactly d where possible.

    A spine of d splits fixes the depth; the remaining splits replace
    leaves drawn uniformly from those above depth d.
    """
    if m % 2 == 0:
        m -= 1
    internal = (m - 1) // 2
    d = max(0, min(d, internal))
    if internal == 0:
        return Leaf(rng.randrange(1 << k))

    def new_split():
        return Split(rng.randrange(n), rng.randrange(1 << k), Leaf(0), Leaf(0))

    root = node = new_split()
    slots = []  # (parent, side, level of the leaf there)
    for lvl in range(1, d):
        nxt = new_split()
        side, other = ("left", "right") if rng.random() < 0.5 else ("right", "left")
        setattr(node, side, nxt)
        slots.append((node, other, lvl))
        node = nxt
    made = d
    while made < internal and slots:
        i = rng.randrange(len(slots))
        slots[i], slots[-1] = slots[-1], slots[i]
        par, side, lvl = slots.pop()
        nd = new_split()
        setattr(par, side, nd)
        made += 1
        if lvl + 1 < d:
            slots.extend(((nd, "left", lvl + 1), (nd, "right", lvl + 1)))
    stack = [root]
    while stack:
        nd = stack.pop()
        if isinstance(nd, Leaf):
            nd.label = rng.randrange(1 << k)
        else:
            stack.extend((nd.right, nd.left))
    return root


# --- text format -----------------------------------------------------------------
def save_tree(path, arr_or_root, k: int, n: int, d_pad: Optional[int] = None):
    root = arr_or_root
    lines = ["tree v1", f"k {k}", f"n {n}"]
    if d_pad is not None:
        lines.append(f"d_pad {d_pad}")
    order, index = [], {}
    q = deque([root])
    while q:
        nd = q.popleft()
        index[id(nd)] = len(order)
        order.append(nd)
        if isinstance(nd, Split):
            q.extend((nd.left, nd.right))
    for i, nd in enumerate(order):
        if isinstance(nd, Leaf):
            lines.append(f"node {i} 0 {i} {i} -1 {nd.label}")
        else:
            lines.append(f"node {i} {nd.threshold} {index[id(nd.left)]} {index[id(nd.right)]} {nd.feature} 0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_tree(text: str) -> tuple[Node, int, int, Optional[int]]:
    """Parse the text format; errors name the offending line."""
    k = n = None
    d_pad = None
    rows = {}
    header_seen = False
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "tree":
                if parts[1:] != ["v1"]:
                    raise ConfigError(f"line {ln}: unsupported format {' '.join(parts[1:])}")
                header_seen = True
            elif parts[0] == "k":
                k = int(parts[1])
            elif parts[0] == "n":
                n = int(parts[1])
            elif parts[0] == "d_pad":
                d_pad = int(parts[1])
            elif parts[0] == "node":
                if len(parts) != 7:
                    raise ConfigError(f"line {ln}: node lines have 6 fields")
                nid, t, l, r, feat, label = (int(x) for x in parts[1:])
                if nid in rows:
                    raise ConfigError(f"line {ln}: duplicate node id {nid}")
                rows[nid] = (t, l, r, feat, label, ln)
            else:
                raise ConfigError(f"line {ln}: unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {ln}: {exc}") from None
    if not header_seen:
        raise ConfigError("missing 'tree v1' header")
    if k is None or n is None:
        raise ConfigError("header must give k and n")
    if not rows:
        raise ConfigError("no nodes")
    children = set()
    for nid, (t, l, r, feat, label, ln) in rows.items():
        if feat >= 0:
            if feat >= n:
                raise ConfigError(f"line {ln}: node {nid} uses feature {feat}, but n = {n}")
            for c in (l, r):
                if c not in rows:
                    raise ConfigError(f"line {ln}: node {nid} points to missing node {c}")
                if c == nid:
                    raise ConfigError(f"line {ln}: internal node {nid} points to itself")
            children.update((l, r))
        elif feat != -1:
            raise ConfigError(f"line {ln}: feature id must be >= 0 or -1")
    roots = [nid for nid in rows if nid not in children]
    if len(roots) != 1:
        raise ConfigError(f"expected one root, found {len(roots)}")
    built = {}
    seen = set()

    def build(nid):
        if nid in seen:
            raise ConfigError(f"node {nid} is reachable twice (not a tree)")
        seen.add(nid)
        t, l, r, feat, label, ln = rows[nid]
        if feat < 0:
            return Leaf(label)
        return Split(feat, t, build(l), build(r))

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 4 * len(rows) + 100))
    try:
        root = build(roots[0])
    finally:
        sys.setrecursionlimit(old)
    if len(seen) != len(rows):
        raise ConfigError("some nodes are unreachable from the root")
    return root, k, n, d_pad


def load_tree(path) -> tuple[Node, int, int, Optional[int]]:
    with open(path) as fh:
        return parse_tree(fh.read())


def load_features(path, n: int) -> list[list[int]]:
    out = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [int(x) for x in line.split(",")]
            except ValueError:
                raise ConfigError(f"features line {ln}: not comma-separated integers") from None
            if len(vals) != n:
                raise ConfigError(f"features line {ln}: {len(vals)} values, expected {n}")
            if any(v < 0 for v in vals):
                raise ConfigError(f"features line {ln}: negative value")
            out.append(vals)
    return out


# --- padded array files ---------------------------------------------------------
def save_array(path, arr: TreeArray):
    """One `t l r feature label` line per slot, feature -1 where v = 0."""
    lines = ["treearray v1", f"k {arr.k}", f"n {arr.n}", f"depth {arr.depth}", f"d_pad {arr.d_pad}"]
    for nd in arr.nodes:
        feat = nd.v.bit_length() - 1 if nd.v else -1
        lines.append(f"{nd.t} {nd.l} {nd.r} {feat} {nd.c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_array(path) -> TreeArray:
    with open(path) as fh:
        text = fh.read()
    hdr, nodes = {}, []
    for ln, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        try:
            if ln == 1:
                if parts != ["treearray", "v1"]:
                    raise ConfigError("line 1: expected 'treearray v1'")
            elif parts[0] in ("k", "n", "depth", "d_pad"):
                hdr[parts[0]] = int(parts[1])
            else:
                t, l, r, feat, c = (int(x) for x in parts)
                nodes.append(TreeNode(t, l, r, 0 if feat < 0 else 1 << feat, c))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {ln}: {exc}") from None
    missing = {"k", "n", "depth", "d_pad"} - hdr.keys()
    if missing:
        raise ConfigError(f"array file lacks {sorted(missing)}")
    arr = TreeArray(nodes, hdr["k"], hdr["n"], hdr["depth"], hdr["d_pad"])
    validate(arr)
    return arr
