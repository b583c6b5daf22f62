import random

import pytest
from hypothesis import given, strategies as st

from tripdte.errors import ConfigError
from tripdte.prf import Prg
from tripdte.tree import (Leaf, Split, TreeNode, count_nodes, depth, encode_tree, evaluate, field_offsets,
                          load_array, load_features, pack_node, pad_size, pad_tree, parse_tree, plaintext_dte,
                          random_tree, save_array, save_tree, unpack_node, validate)

from oracles import dte_ref

PAD_PAIRS = [(23, 32), (43, 64), (337, 512), (171, 256), (787, 1024), (851, 1024), (4179, 8192)]

EXAMPLE = """tree v1
k 8
n 2
node 0 10 1 2 0 0
node 1 0 1 1 -1 7
node 2 0 2 2 -1 9
"""


@pytest.mark.parametrize("m,mp", PAD_PAIRS + [(1, 1), (2, 2), (64, 64), (65, 128)])
def test_pad_size(m, mp):
    assert pad_size(m) == mp


@given(st.integers(0, 2**20), st.integers(1, 24), st.integers(1, 40), st.data())
def test_pack_roundtrip(seed, k, n, data):
    nd = TreeNode(*(data.draw(st.integers(0, 2**w - 1)) for w in (k, k, k, n, k)))
    x = pack_node(nd, k, n)
    assert x < 2 ** (4 * k + n)
    assert unpack_node(x, k, n) == nd
    off = field_offsets(k, n)
    assert x >> off["t"][0] == nd.t
    assert x & (2**k - 1) == nd.c


def _trees():
    return st.tuples(st.integers(1, 200), st.integers(0, 9), st.integers(1, 10), st.integers(0, 2**32))


@given(_trees(), st.data())
def test_padded_array_matches_logical_tree(shape, data):
    m, d, n, seed = shape
    k = 12
    rng = random.Random(seed)
    root = random_tree(m, d, n, k, rng)
    arr = encode_tree(root, k, n)
    padded = pad_tree(arr, rng)
    validate(padded)
    assert padded.m == pad_size(arr.m)
    x = data.draw(st.lists(st.integers(0, 2**k - 1), min_size=n, max_size=n))
    expect = dte_ref(root, x)
    assert evaluate(root, x) == expect
    assert plaintext_dte(arr, x) == expect
    assert plaintext_dte(padded, x) == expect
    # extra steps stay on the leaf
    assert plaintext_dte(padded, x, padded.d_pad + 5) == expect


@given(st.integers(1, 500), st.integers(0, 12), st.integers(0, 2**32))
def test_random_tree_shape(m, d, seed):
    root = random_tree(m, d, 4, 16, random.Random(seed))
    mo = m if m % 2 else m - 1
    assert count_nodes(root) <= mo
    internal = (mo - 1) // 2
    eff = min(max(d, 1), internal)  # a tree with any split has depth >= 1
    if mo <= 2 ** (eff + 1) - 1:
        assert count_nodes(root) == mo
    assert depth(root) == eff


def test_pad_keeps_root_and_accepts_prg():
    root, k, n, _ = parse_tree(EXAMPLE)
    arr = encode_tree(root, k, n)
    for rng in (1, Prg(1), random.Random(1)):
        p = pad_tree(arr, rng)
        assert p.nodes[0].t == 10 and p.m == 4
        assert [plaintext_dte(p, x) for x in ([5, 0], [12, 3], [10, 1])] == [7, 9, 9]


def test_example_file_and_array_roundtrip(tmp_path):
    root, k, n, d_pad = parse_tree(EXAMPLE)
    arr = pad_tree(encode_tree(root, k, n, 3), 5)
    path = tmp_path / "t.arr"
    save_array(path, arr)
    back = load_array(path)
    assert back.nodes == arr.nodes and (back.k, back.n, back.depth, back.d_pad) == (8, 2, 1, 3)
    tpath = tmp_path / "t.txt"
    save_tree(tpath, root, k, n, 4)
    r2, k2, n2, dp2 = parse_tree(tpath.read_text())
    assert (k2, n2, dp2) == (8, 2, 4)
    assert encode_tree(r2, k, n).nodes == encode_tree(root, k, n).nodes


@pytest.mark.parametrize("text,needle", [
    (EXAMPLE.replace("node 0 10 1 2 0 0", "node 0 10 1 2 5 0"), "line 4"),
    (EXAMPLE.replace("node 0 10 1 2 0 0", "node 0 10 1 3 0 0"), "missing node 3"),
    (EXAMPLE.replace("node 2 0 2 2 -1 9", "node 1 0 2 2 -1 9"), "duplicate"),
    (EXAMPLE.replace("tree v1", "tree v2"), "unsupported"),
    (EXAMPLE.replace("k 8\n", ""), "k and n"),
    (EXAMPLE + "bogus 1\n", "line 7"),
    (EXAMPLE.replace("node 0 10 1 2 0 0", "node 0 10 x 2 0 0"), "line 4"),
    (EXAMPLE + "node 3 0 3 3 -1 1\n", "root"),
])
def test_parse_errors_name_the_line(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_tree(text)


def test_feature_id_error_names_node():
    with pytest.raises(ConfigError, match="node 0 uses feature 5"):
        parse_tree(EXAMPLE.replace("node 0 10 1 2 0 0", "node 0 10 1 2 5 0"))


def test_encode_rejects_bad_values():
    with pytest.raises(ConfigError):
        encode_tree(Split(0, 300, Leaf(1), Leaf(2)), 8, 1)
    with pytest.raises(ConfigError):
        encode_tree(Split(0, 3, Leaf(1), Leaf(256)), 8, 1)
    with pytest.raises(ConfigError):
        encode_tree(Split(1, 3, Leaf(1), Leaf(2)), 8, 1)


def test_validate_rejects_broken_arrays():
    arr = pad_tree(encode_tree(parse_tree(EXAMPLE)[0], 8, 2), 1)
    arr.nodes[1] = TreeNode(0, 0, 1, 0, 7)
    with pytest.raises(ConfigError):
        validate(arr)


def test_features_file(tmp_path):
    f = tmp_path / "q.csv"
    f.write_text("1,2\n# comment\n\n3,4\n")
    assert load_features(f, 2) == [[1, 2], [3, 4]]
    f.write_text("1,2,3\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_features(f, 2)
