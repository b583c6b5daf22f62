"""Command line entry points: one process per party, or all three in-process.

    tripdte encode  --tree model.txt --out model.arr
    tripdte serve   --party 0 --peer0 h:p --peer1 h:p --peer2 h:p --tree model.arr
    tripdte serve   --party 1 ... --features queries.csv
    tripdte setup / eval       (the same, split into two invocations)
    tripdte run     --tree model.txt --features queries.csv
    tripdte bench   --d 20 --n 784 --m 4179 --k 64 --os dpf
    tripdte fault-matrix --out matrix.csv

Exit status: 0 success, 2 protocol abort, 3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from typing import Optional

from .dpf import KeyFormatError
from .errors import ConfigError, ProtocolAbort
from .harness import (MATRIX_COLUMNS, FaultSpec, Scenario, fault_matrix, load_scenario, run_three_parties,
                      write_csv)
from .pdte import PdteParams, exchange_params, load_state, pdte_eval, pdte_preprocess, pdte_setup, save_state
from .rss import Party
from .transport import tcp_endpoint
from .tree import (encode_tree, load_array, load_features, load_tree, pad_tree, random_tree, save_array)

log = logging.getLogger("tripdte")

EXIT_OK, EXIT_ABORT, EXIT_CONFIG = 0, 2, 3

BENCH_COLUMNS = ("os", "k", "n", "d_pad", "m", "m_pad", "ell", "queries", "reps",
                 "setup_bytes", "preprocess_bytes", "online_bytes", "online_kb",
                 "setup_ms", "preprocess_ms", "online_ms")


# --- helpers -------------------------------------------------------------------
def _seed(args) -> int:
    return args.seed if args.seed is not None else int.from_bytes(os.urandom(8), "little")


def _load_model(path: str, pad_seed: int, d_pad: Optional[int] = None):
    """A text tree (padded here) or an array file written by `encode`."""
    with open(path) as fh:
        head = fh.readline().split()
    if head == ["treearray", "v1"]:
        arr = load_array(path)
        if d_pad is not None:
            arr.d_pad = max(arr.depth, d_pad)
        return arr
    root, k, n, dp = load_tree(path)
    return pad_tree(encode_tree(root, k, n, d_pad if d_pad is not None else dp), pad_seed)


def _addresses(args) -> list[str]:
    addrs = [args.peer0, args.peer1, args.peer2]
    if args.listen:
        addrs[args.party] = args.listen
    if any(a is None for a in addrs):
        raise ConfigError("need --peer0, --peer1 and --peer2 (or --listen for this party)")
    return addrs


def _connect(args) -> Party:
    ep = tcp_endpoint(args.party, _addresses(args), timeout=args.timeout, delay_ms=args.delay_ms)
    return Party(args.party, ep, _seed(args))


def _features(args, n: int, fo: int, pid: int) -> list:
    if pid != fo:
        return []
    if not args.features:
        raise ConfigError("the feature owner needs --features")
    return load_features(args.features, n)


def _print_labels(labels, out: Optional[str]):
    text = "".join(f"{c}\n" for c in labels)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _online(p: Party, params: PdteParams, st, args, nq: int, xs: list) -> list:
    mats = pdte_preprocess(p, st, nq)
    labels = []
    for q, qm in enumerate(mats):
        y = pdte_eval(p, st, qm, xs[q] if p.id == params.fo else None)
        labels.append(y)
    return labels


def _party_session(args, body):
    """Run `body(p)` on a TCP-connected party; tell the peers if we stop early."""
    p = _connect(args)
    try:
        return body(p)
    except ProtocolAbort as exc:
        p.ep.abort(exc.site)
        raise
    except ConfigError:
        p.ep.abort("config")
        raise
    finally:
        p.ep.close()


# --- commands ------------------------------------------------------------------
def cmd_encode(args) -> int:
    root, k, n, d_pad = load_tree(args.tree)
    arr = encode_tree(root, k, n, args.d_pad if args.d_pad is not None else d_pad)
    m = arr.m
    arr = pad_tree(arr, _seed(args))
    if args.out:
        save_array(args.out, arr)
    print(f"m={m} m'={arr.m} d={arr.depth} d_pad={arr.d_pad} l={arr.ell} lm={arr.lm}")
    return EXIT_OK


def cmd_serve(args) -> int:
    """Setup, preprocessing and every query in one session."""
    def body(p):
        arr = _load_model(args.tree, _seed(args)) if args.party == args.mo else None
        xs = []
        if args.party == args.fo:
            # n comes from the model owner; read the file after the shape is known
            nq = _count_lines(args.features)
        else:
            nq = 0
        params, nq = exchange_params(p, args.k, args.os, arr, queries=nq, mo=args.mo, fo=args.fo)
        xs = _features(args, params.n, params.fo, p.id)
        st = pdte_setup(p, params, arr)
        labels = _online(p, params, st, args, nq, xs)
        if p.id == params.fo:
            _print_labels(labels, args.out)
        _report(p, args)
        return EXIT_OK
    return _party_session(args, body)


def cmd_setup(args) -> int:
    if not args.out:
        raise ConfigError("setup needs --out for the state file")

    def body(p):
        arr = _load_model(args.tree, _seed(args)) if args.party == args.mo else None
        params, _ = exchange_params(p, args.k, args.os, arr, mo=args.mo, fo=args.fo)
        st = pdte_setup(p, params, arr)
        save_state(args.out, p, st)
        _report(p, args)
        return EXIT_OK
    return _party_session(args, body)


def cmd_eval(args) -> int:
    if not args.state:
        raise ConfigError("eval needs --state from a previous setup")

    def body(p):
        st = load_state(args.state, p)
        params = st.params
        # fresh pairwise keys: the saved ones already produced this state's randomness
        p.setup_keys()
        nq = _count_lines(args.features) if p.id == params.fo else 0
        params, nq = exchange_params(p, params.k, params.os_kind, params=params, queries=nq,
                                     mo=params.mo, fo=params.fo)
        xs = _features(args, params.n, params.fo, p.id)
        labels = _online(p, params, st, args, nq, xs)
        if p.id == params.fo:
            _print_labels(labels, args.out)
        _report(p, args)
        return EXIT_OK
    return _party_session(args, body)


def _count_lines(path: Optional[str]) -> int:
    if not path:
        raise ConfigError("the feature owner needs --features")
    with open(path) as fh:
        return sum(1 for line in fh if line.strip() and not line.lstrip().startswith("#"))


def _report(p: Party, args):
    s = p.ep.stats
    log.info("P%d bytes sent: %s", p.id, json.dumps(s.bytes_by_phase))


def cmd_run(args) -> int:
    """All three parties in this process."""
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        if not args.tree or not args.features:
            raise ConfigError("run needs --scenario, or --tree and --features")
        seed = _seed(args)
        arr = _load_model(args.tree, seed, args.d_pad)
        sc = Scenario(arr, load_features(args.features, arr.n), args.os, seed=seed)
    if args.fault:
        sc.fault = FaultSpec.parse(args.fault)
    rep = run_three_parties(sc, args.seed, delay_ms=args.delay_ms)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps({
                "outcome": rep.outcome, "abort_site": rep.abort_site, "abort_phase": rep.abort_phase,
                "labels": rep.labels, "bytes": rep.bytes_by_phase(), "digest": rep.digest,
                "seconds": rep.phase_seconds,
            }) + "\n")
    if rep.outcome == "completed":
        _print_labels(rep.labels, None)
        return EXIT_OK
    print(f"abort at {rep.abort_site} ({rep.abort_phase})", file=sys.stderr)
    return EXIT_ABORT if rep.outcome == "aborted" else EXIT_CONFIG


def bench_rows(os_kinds, k, n, m, d, d_pad, reps, queries, seed, delay_ms=0.0) -> list[dict]:
    """Mean bytes and milliseconds over `reps` random trees of the given shape."""
    if m % 2 == 0:
        m -= 1  # full binary trees have an odd node count
    rows = []
    for kind in os_kinds:
        acc = {c: 0.0 for c in ("setup_bytes", "preprocess_bytes", "online_bytes",
                                "setup_ms", "preprocess_ms", "online_ms")}
        shape = None
        for rep in range(reps):
            rng = random.Random(seed + rep)
            arr = pad_tree(encode_tree(random_tree(m, d, n, k, rng), k, n, d_pad), rng)
            xs = [[rng.randrange(1 << k) for _ in range(n)] for _ in range(queries)]
            r = run_three_parties(Scenario(arr, xs, kind), seed + rep, delay_ms=delay_ms)
            if not r.correct:
                raise ProtocolAbort(r.abort_site or "bench", "benchmark run failed")
            b, t = r.bytes_by_phase(), r.phase_seconds
            acc["setup_bytes"] += b["setup"]
            acc["preprocess_bytes"] += b["os-preprocess"] / queries
            acc["online_bytes"] += b["online"] / queries
            acc["setup_ms"] += 1e3 * t["setup"]
            acc["preprocess_ms"] += 1e3 * t["os-preprocess"] / queries
            acc["online_ms"] += 1e3 * t["online"] / queries
            shape = arr
        row = {"os": kind, "k": k, "n": n, "d_pad": shape.d_pad, "m": m, "m_pad": shape.m,
               "ell": shape.ell, "queries": queries, "reps": reps}
        for c, v in acc.items():
            row[c] = round(v / reps, 1) if c.endswith("_ms") else round(v / reps)
        row["online_kb"] = round(row["online_bytes"] / 1000, 1)
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    kinds = ("rss", "dpf") if args.os == "both" else (args.os,)
    rows = bench_rows(kinds, args.k, args.n, args.m, args.d, args.d_pad, args.reps, args.queries,
                      args.seed or 0, args.delay_ms)
    text = write_csv(rows, args.out, BENCH_COLUMNS)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fault_matrix(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        m = args.m if args.m % 2 else args.m - 1
        rng = random.Random(args.seed or 0)
        arr = pad_tree(encode_tree(random_tree(m, args.d, args.n, args.k, rng), args.k, args.n), rng)
        xs = [[rng.randrange(1 << args.k) for _ in range(args.n)] for _ in range(args.queries)]
        sc = Scenario(arr, xs, args.os)
    rows = fault_matrix(sc, args.seed or 0)
    text = write_csv(rows, args.out, MATRIX_COLUMNS)
    if not args.out:
        sys.stdout.write(text)
    bad = [r for r in rows if not r["ok"]]
    print(f"{len(rows)} rows, {len(bad)} unexpected", file=sys.stderr)
    return EXIT_OK if not bad else EXIT_ABORT


# --- argument parsing ---------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are configuration errors, not protocol aborts
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tripdte", description="Three-party private decision tree evaluation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, network=False):
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--delay-ms", type=float, default=0.0, help="added latency per message")
        sp.add_argument("--out")
        if network:
            sp.add_argument("--party", type=int, choices=(0, 1, 2), required=True)
            sp.add_argument("--listen", help="host:port to bind (defaults to this party's --peerN)")
            for i in range(3):
                sp.add_argument(f"--peer{i}", help=f"host:port of P{i}")
            sp.add_argument("--timeout", type=float, default=120.0)
            sp.add_argument("--mo", type=int, default=0, help="model owner party")
            sp.add_argument("--fo", type=int, default=1, help="feature owner party")

    def proto(sp):
        sp.add_argument("--os", choices=("rss", "dpf"), default="dpf")
        sp.add_argument("--k", type=int, default=16)

    sp = sub.add_parser("encode", help="validate and pad a tree")
    sp.add_argument("--tree", required=True)
    sp.add_argument("--d-pad", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_encode)

    for name, fn, hlp in (("serve", cmd_serve, "setup and answer queries over TCP"),
                          ("setup", cmd_setup, "share the tree and save this party's state"),
                          ("eval", cmd_eval, "answer queries from a saved state")):
        sp = sub.add_parser(name, help=hlp)
        common(sp, network=True)
        proto(sp)
        sp.add_argument("--tree", help="model file (model owner)")
        sp.add_argument("--features", help="one comma-separated query per line (feature owner)")
        if name == "eval":
            sp.add_argument("--state", help="state file written by setup")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("run", help="all three parties in-process")
    common(sp)
    proto(sp)
    sp.add_argument("--tree")
    sp.add_argument("--features")
    sp.add_argument("--d-pad", type=int, default=None)
    sp.add_argument("--scenario", help="scenario file (key = value lines)")
    sp.add_argument("--fault", help="site:party[:value[:occurrence[:key_class]]]")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("bench", help="communication and time on random trees")
    common(sp)
    sp.add_argument("--os", choices=("rss", "dpf", "both"), default="both")
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--m", type=int, default=63, help="node count before padding")
    sp.add_argument("--d", type=int, default=8, help="tree depth")
    sp.add_argument("--d-pad", type=int, default=None)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--queries", type=int, default=1)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("fault-matrix", help="inject one fault per run at every site and party")
    common(sp)
    sp.add_argument("--scenario")
    sp.add_argument("--os", choices=("rss", "dpf"), default="dpf")
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--m", type=int, default=127)
    sp.add_argument("--d", type=int, default=6)
    sp.add_argument("--queries", type=int, default=2)
    sp.set_defaults(func=cmd_fault_matrix)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ProtocolAbort as exc:
        where = f" in {exc.phase}" if exc.phase else ""
        print(f"abort at {exc.site}{where}: {exc.reason or exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, KeyFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
