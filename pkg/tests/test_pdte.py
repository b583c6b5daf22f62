import random

import pytest
from hypothesis import given, settings, strategies as st

from tripdte.errors import ConfigError, ProtocolAbort
from tripdte.pdte import (PdteParams, exchange_params, load_state, pdte_eval, pdte_preprocess, pdte_setup,
                          run_party, save_state)
from tripdte.tree import encode_tree, pad_tree, parse_tree, plaintext_dte, random_tree

from conftest import ok3, run3
from test_tree import EXAMPLE

QUERIES = [[5, 0], [12, 3], [10, 1]]


def _example(d_pad=None):
    root, k, n, _ = parse_tree(EXAMPLE)
    return pad_tree(encode_tree(root, k, n, d_pad), 1)


def _run(arr, queries, kind, seed=1, **kw):
    params = PdteParams.for_tree(arr, kind, **kw)
    out, err, eps = run3(lambda p: run_party(p, params, arr if p.id == params.mo else None, queries),
                         seed=seed, keys=False)
    for e in err:
        if e is not None:
            raise e
    return out, eps


@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_example_tree(kind):
    out, _ = _run(_example(), QUERIES, kind)
    assert out[1] == [7, 9, 9]
    assert out[0] == out[2] == [None] * 3


@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_other_roles(kind):
    arr = _example(2)
    out, _ = _run(arr, QUERIES, kind, mo=2, fo=0)
    assert out[0] == [7, 9, 9]


@pytest.mark.parametrize("kind", ["rss", "dpf"])
@given(st.integers(1, 150), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
@settings(max_examples=8)
def test_random_trees_match_plaintext(kind, m, d, n, seed):
    rng = random.Random(seed)
    arr = pad_tree(encode_tree(random_tree(m, d, n, 16, rng), 16, n), rng)
    qs = [[rng.randrange(2**16) for _ in range(n)] for _ in range(3)]
    out, _ = _run(arr, qs, kind, seed=seed)
    assert out[1] == [plaintext_dte(arr, x) for x in qs]


@pytest.mark.parametrize("kind", ["rss", "dpf"])
def test_traffic_does_not_depend_on_tree_or_query(kind):
    """Same public shape, different secrets: identical frame sequence and sizes."""
    shapes = []
    for seed in (1, 2):
        rng = random.Random(seed)
        arr = pad_tree(encode_tree(random_tree(63, 5, 4, 16, rng), 16, 4, 6), rng)
        qs = [[rng.randrange(2**16) for _ in range(4)] for _ in range(2)]
        _, eps = _run(arr, qs, kind, seed=seed)
        shapes.append([(ep.log, ep.stats.bytes_by_phase) for ep in eps])
    assert shapes[0] == shapes[1]


def test_params_validation():
    with pytest.raises(ConfigError):
        PdteParams(16, 4, 6, 3)
    with pytest.raises(ConfigError):
        PdteParams(4, 4, 32, 3)
    with pytest.raises(ConfigError):
        PdteParams(16, 4, 8, 3, "pir")
    with pytest.raises(ConfigError):
        PdteParams(16, 4, 8, 3, mo=1, fo=1)
    assert PdteParams(16, 4, 8, 3).ell == 68
    assert PdteParams(16, 4, 8, 3).digest() != PdteParams(16, 4, 8, 3, "rss").digest()


def test_handshake_refuses_mismatch():
    arr = _example()

    def f(p):
        k = 9 if p.id == 2 else 8
        return exchange_params(p, k, "dpf", arr if p.id == 0 else None, queries=1)
    _, err, _ = run3(f)
    assert all(isinstance(e, ConfigError) for e in err)


@pytest.mark.parametrize("bad", [[1, 2, 3], [1, 256]])
def test_bad_feature_vector(bad):
    arr = _example()
    params = PdteParams.for_tree(arr, "dpf")
    _, err, _ = run3(lambda p: run_party(p, params, arr if p.id == 0 else None, [bad]), keys=False)
    assert isinstance(err[1], ConfigError)
    assert isinstance(err[0], ProtocolAbort) and isinstance(err[2], ProtocolAbort)


def test_query_material_is_single_use():
    arr = _example()
    params = PdteParams.for_tree(arr, "dpf")

    def f(p):
        st_ = pdte_setup(p, params, arr if p.id == 0 else None)
        qm = pdte_preprocess(p, st_, 1)[0]
        pdte_eval(p, st_, qm, [1, 1] if p.id == 1 else None)
        pdte_eval(p, st_, qm, [1, 1] if p.id == 1 else None)
    _, err, _ = run3(f, keys=False)
    assert all(isinstance(e, ConfigError) for e in err)


def test_saved_state_answers_queries(tmp_path):
    arr = _example()
    params = PdteParams.for_tree(arr, "dpf")

    def setup(p):
        st_ = pdte_setup(p, params, arr if p.id == 0 else None)
        save_state(tmp_path / f"s{p.id}.bin", p, st_)

    ok3(setup, keys=False)

    def later(p):
        st_ = load_state(tmp_path / f"s{p.id}.bin", p)
        p.setup_keys()
        mats = pdte_preprocess(p, st_, 3)
        return [pdte_eval(p, st_, qm, x if p.id == 1 else None) for qm, x in zip(mats, QUERIES)]

    out = ok3(later, seed=99, keys=False)
    assert out[1] == [7, 9, 9]

    def wrong_owner(p):
        load_state(tmp_path / f"s{(p.id + 1) % 3}.bin", p)
    _, err, _ = run3(wrong_owner, keys=False)
    assert all(isinstance(e, ConfigError) for e in err)
