"""In-process three-party runs with optional single-party fault injection.

The three engines run in threads over the lockstep transport, so a run
is fully determined by (seed, scenario, fault): same frames, same abort
site, same transcript digest.  A fault is an `Adversary` wrapped around
one party that rewrites the value at one declared site on one
invocation; honest-party state alone decides the reported outcome.
"""
from __future__ import annotations

import csv
import hashlib
import io
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from . import dpf as D
from .errors import ConfigError, ProtocolAbort
from .pdte import PdteParams, exchange_params, pdte_eval, pdte_preprocess, pdte_setup
from .prf import Prg, derive_key
from .rss import Adversary, Party
from .transport import PHASES, local_network
from .tree import TreeArray, load_features, load_tree, encode_tree, pad_tree, plaintext_dte

FAULT_SITES = ("mul-reshare", "os-reshare", "mac-attach", "open-share", "recon-share",
               "share-delta", "dpf-key", "rdx-share", "triple-c")


@dataclass(frozen=True)
class FaultSpec:
    """XOR `value` into the `occurrence`-th value party `party` emits at `site`.

    For site "dpf-key" the dealt key pair is replaced by one of the
    malformed classes instead (value 0 leaves it alone).
    """

    site: str
    party: int
    value: int = 1
    occurrence: int = 0
    key_class: Optional[str] = None

    def __post_init__(self):
        if self.site not in FAULT_SITES:
            raise ConfigError(f"unknown fault site {self.site!r}")
        if self.party not in (0, 1, 2):
            raise ConfigError("fault party must be 0, 1 or 2")
        if self.site == "dpf-key" and self.value and self.key_class not in D.MALFORMED_CLASSES:
            raise ConfigError(f"dpf-key faults need a key class from {sorted(D.MALFORMED_CLASSES)}")

    @property
    def label(self) -> str:
        return f"dpf-key-class({self.key_class})" if self.site == "dpf-key" else self.site

    @classmethod
    def parse(cls, text: str) -> "FaultSpec":
        """site:party[:value[:occurrence[:key_class]]], value in hex or decimal."""
        parts = text.split(":")
        if len(parts) < 2:
            raise ConfigError("fault spec is site:party[:value[:occurrence[:class]]]")
        site, party = parts[0], int(parts[1])
        value = int(parts[2], 0) if len(parts) > 2 else 1
        occ = int(parts[3]) if len(parts) > 3 else 0
        kc = parts[4] if len(parts) > 4 else None
        return cls(site, party, value, occ, kc)


class FaultAdversary(Adversary):
    def __init__(self, spec: FaultSpec, seed=0):
        self.spec = spec
        self.count = 0
        self.reached = False
        self.fired = False
        self.fired_phase: Optional[str] = None
        self.party: Optional[Party] = None
        self.eps: list = []
        self.results_before: Optional[int] = None
        self.rng = Prg(derive_key(b"fault", seed, spec.site, spec.party, spec.occurrence))

    def tamper(self, site: str, value):
        sp = self.spec
        if site != sp.site:
            return value
        n = self.count
        self.count += 1
        if n != sp.occurrence:
            return value
        self.reached = True
        if not sp.value:
            return value
        self.fired = True
        self.fired_phase = self.party.ep.phase if self.party else None
        # lockstep runs one party at a time, so this count is a consistent cut
        self.results_before = _result_frames(self.eps)
        if site == "dpf-key":
            k0, k1, rdx = value
            m0, m1 = D.malform(sp.key_class, k0, k1, rdx, self.rng)
            return m0, m1, rdx
        return value ^ sp.value


def _result_frames(eps) -> int:
    return sum(1 for ep in eps for _, sid in ep.log if sid.tag == "result")


@dataclass
class Scenario:
    tree: TreeArray
    queries: list
    os_kind: str = "dpf"
    d_pad: Optional[int] = None
    mo: int = 0
    fo: int = 1
    seed: int = 0
    fault: Optional[FaultSpec] = None

    @property
    def params(self) -> PdteParams:
        return PdteParams.for_tree(self.tree, self.os_kind, self.d_pad, mo=self.mo, fo=self.fo)


def load_scenario(path) -> Scenario:
    """key = value lines: tree, features, os, d_pad, seed, fault, pad_seed.

    Relative paths are resolved against the scenario file's directory.
    """
    import os
    base = os.path.dirname(os.path.abspath(path))
    kv = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"scenario line {ln}: expected key = value")
            k, v = (x.strip() for x in line.split("=", 1))
            kv[k] = v
    for req in ("tree", "features"):
        if req not in kv:
            raise ConfigError(f"scenario needs '{req}'")
    root, k, n, d_pad = load_tree(os.path.join(base, kv["tree"]))
    arr = pad_tree(encode_tree(root, k, n, d_pad), int(kv.get("pad_seed", 0)))
    queries = load_features(os.path.join(base, kv["features"]), n)
    fault = FaultSpec.parse(kv["fault"]) if kv.get("fault") else None
    return Scenario(arr, queries, kv.get("os", "dpf"),
                    int(kv["d_pad"]) if "d_pad" in kv else None,
                    seed=int(kv.get("seed", 0)), fault=fault)


@dataclass
class RunReport:
    outcome: str  # completed | aborted | error
    abort_site: Optional[str]
    abort_phase: Optional[str]
    labels: Optional[list]
    expected: list
    stats: list  # ChannelStats per party
    digest: str
    fault: Optional[FaultSpec] = None
    fault_reached: bool = False
    fault_fired: bool = False
    fault_phase: Optional[str] = None
    result_released: bool = False
    released_after_fault: int = 0  # result frames sent after the fault fired
    errors: list = field(default_factory=list)
    wall_time: float = 0.0
    phase_seconds: dict = field(default_factory=dict)  # as seen by the feature owner

    @property
    def leaked(self) -> bool:
        # result frames go out only after the MAC check and verify() pass,
        # so one sent after the fault in an aborted run escaped a failed check
        return self.outcome == "aborted" and self.released_after_fault > 0

    @property
    def correct(self) -> bool:
        return self.outcome == "completed" and self.labels == self.expected

    def bytes_by_phase(self) -> dict:
        return {ph: sum(s.sent_bytes(ph) for s in self.stats) for ph in PHASES}

    def online_bytes(self) -> int:
        return sum(s.online_bytes() for s in self.stats)

    def offline_bytes(self) -> int:
        return sum(s.offline_bytes() for s in self.stats)


def run_three_parties(sc: Scenario, seed: Optional[int] = None, fault: Optional[FaultSpec] = None,
                      lockstep: bool = True, timeout: float = 120.0, delay_ms: float = 0.0) -> RunReport:
    """Setup, preprocessing and every query of `sc`; aborts are reported, not raised."""
    seed = sc.seed if seed is None else seed
    fault = fault if fault is not None else sc.fault
    params = sc.params
    eps = local_network(timeout=timeout, delay_ms=delay_ms, lockstep=lockstep)
    adv = FaultAdversary(fault, seed) if fault else None
    if adv:
        adv.eps = eps
    results: list = [None] * 3
    errs: list = [None] * 3
    phases: list = [None] * 3
    timings: list = [None] * 3
    order: list = []
    lock = threading.Lock()
    nq = len(sc.queries)

    def body(i: int):
        ep = eps[i]
        p = Party(i, ep, seed, adversary=adv if fault and fault.party == i else None)
        if p.adv is adv and adv is not None:
            adv.party = p
        if ep.lockstep:
            ep.lockstep.enter(i)
        try:
            t0 = time.perf_counter()
            exchange_params(p, params.k, params.os_kind, sc.tree if i == params.mo else None,
                            queries=nq, mo=params.mo, fo=params.fo)
            st = pdte_setup(p, params, sc.tree if i == params.mo else None)
            t1 = time.perf_counter()
            mats = pdte_preprocess(p, st, nq)
            t2 = time.perf_counter()
            results[i] = [pdte_eval(p, st, qm, x if i == params.fo else None)
                          for qm, x in zip(mats, sc.queries)]
            t3 = time.perf_counter()
            timings[i] = {"setup": t1 - t0, "os-preprocess": t2 - t1, "online": t3 - t2}
        except ProtocolAbort as exc:
            with lock:
                errs[i], phases[i] = exc, exc.phase or ep.phase
                order.append(i)
            ep.abort(exc.site)
        except Exception as exc:  # bugs and config errors surface as "error"
            with lock:
                errs[i], phases[i] = exc, ep.phase
                order.append(i)
            ep.abort("error")
        finally:
            if ep.lockstep:
                ep.lockstep.leave(i)

    t0 = time.perf_counter()
    threads = [threading.Thread(target=body, args=(i,), daemon=True) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0

    corrupt = fault.party if fault else None
    honest = [i for i in range(3) if i != corrupt]
    expected = [plaintext_dte(sc.tree, x, params.d_pad) for x in sc.queries]
    total = _result_frames(eps)
    released = total > 0
    after = total - adv.results_before if adv and adv.results_before is not None else 0
    # where the abort was first noticed by an honest party (not a relayed notice)
    site = phase = None
    for i in order:
        e = errs[i]
        if i in honest and isinstance(e, ProtocolAbort) and e.site != "peer-abort":
            site, phase = e.site, phases[i]
            break
    if any(isinstance(errs[i], ProtocolAbort) for i in honest):
        outcome = "aborted"
        if site is None:
            first = next(i for i in order if i in honest)
            site, phase = errs[first].site, phases[first]
    elif any(errs[i] is not None for i in honest):
        outcome = "error"
        first = next(i for i in order if i in honest)
        site, phase = type(errs[first]).__name__, phases[first]
    else:
        outcome = "completed"
    h = hashlib.sha256()
    for ep in eps:
        h.update(bytes.fromhex(ep.transcript_digest()))
    return RunReport(
        outcome=outcome, abort_site=site, abort_phase=phase,
        labels=results[params.fo] if outcome == "completed" else None,
        expected=expected, stats=[ep.stats for ep in eps], digest=h.hexdigest(),
        fault=fault, fault_reached=bool(adv and adv.reached), fault_fired=bool(adv and adv.fired),
        fault_phase=adv.fired_phase if adv else None, result_released=released,
        released_after_fault=after,
        errors=[repr(e) if e else None for e in errs], wall_time=wall,
        phase_seconds=timings[params.fo] or {},
    )


def matrix_faults(value: int = 1, include_zero: bool = True, parties=(0, 1, 2),
                  occurrences=(0,)) -> list[FaultSpec]:
    """Every site x party with a canonical nonzero error (plus zero-error rows)."""
    specs = []
    for site in FAULT_SITES:
        classes = sorted(D.MALFORMED_CLASSES) if site == "dpf-key" else [None]
        for party in parties:
            for occ in occurrences:
                for kc in classes:
                    specs.append(FaultSpec(site, party, value, occ, kc))
                if include_zero:
                    specs.append(FaultSpec(site, party, 0, occ, None))
    return specs


MATRIX_COLUMNS = ("site", "key_class", "party", "value", "occurrence", "expect", "outcome",
                  "abort_site", "abort_phase", "fault_phase", "reached", "released_after_fault", "ok")


def classify(rep: RunReport) -> tuple[str, bool]:
    """(expected outcome, whether the run met it) for one matrix row."""
    f = rep.fault
    if f is not None and not rep.fault_reached:
        return "not-triggered", rep.outcome == "completed" and rep.correct
    if f is not None and f.value:
        ok = rep.outcome == "aborted" and not rep.leaked
        return "aborted", ok
    return "completed", rep.correct


def fault_matrix(sc: Scenario, seed: int = 0, specs: Optional[list] = None, out=None) -> list[dict]:
    """Run every FaultSpec against the scenario; optionally write CSV to `out`."""
    if sc.tree.ell < 64:
        import warnings
        warnings.warn(f"fault matrix with l = {sc.tree.ell} < 64: false passes are possible")
    specs = matrix_faults() if specs is None else specs
    rows = []
    for f in specs:
        rep = run_three_parties(sc, seed, f)
        expect, ok = classify(rep)
        rows.append({
            "site": f.site, "key_class": f.key_class or "", "party": f.party, "value": f.value,
            "occurrence": f.occurrence, "expect": expect, "outcome": rep.outcome,
            "abort_site": rep.abort_site or "", "abort_phase": rep.abort_phase or "",
            "fault_phase": rep.fault_phase or "", "reached": int(rep.fault_reached),
            "released_after_fault": rep.released_after_fault, "ok": int(ok),
        })
    if out is not None:
        write_csv(rows, out, MATRIX_COLUMNS)
    return rows


def write_csv(rows: list[dict], out, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if hasattr(out, "write"):
        out.write(text)
    elif out is not None:
        with open(out, "w") as fh:
            fh.write(text)
    return text
