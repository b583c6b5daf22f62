"""Framed pairwise channels between the three parties.

Wire format of a frame: 4-byte little-endian payload length, 2-byte tag
id, 8-byte session counter, 1-byte sender, then the payload.  The same
bytes go over the in-process queues and over TCP, so byte counts and
transcript digests agree between the two.
"""
from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ProtocolAbort, TransportError

HEADER = struct.Struct("<IHQB")
HEADER_SIZE = HEADER.size  # 15

PHASES = ("setup", "os-preprocess", "online")
OFFLINE_PHASES = ("setup", "os-preprocess")

# tag 0 is reserved for control frames (abort notices), never counted
TAGS = (
    "control", "handshake", "prf-keys", "rand", "zero", "open", "lazy-open",
    "recon", "share", "share-check", "mul", "verify", "coin", "triple",
    "and", "dpf-keys", "dpf-check", "unit-check", "os-open", "os-recon",
    "os-reshare", "mac", "feature", "result", "params", "bench",
)
TAG_IDS = {name: i for i, name in enumerate(TAGS)}


def next_party(i: int) -> int:
    return (i + 1) % 3


def prev_party(i: int) -> int:
    return (i + 2) % 3


class SessionId(NamedTuple):
    tag: str
    counter: int

    def encode(self) -> bytes:
        return TAG_IDS[self.tag].to_bytes(2, "little") + self.counter.to_bytes(8, "little")


@dataclass(frozen=True)
class Frame:
    session: SessionId
    sender: int
    payload: bytes

    @property
    def length(self) -> int:
        return len(self.payload)

    def encode(self) -> bytes:
        hdr = HEADER.pack(len(self.payload), TAG_IDS[self.session.tag], self.session.counter, self.sender)
        return hdr + self.payload

    @classmethod
    def decode(cls, raw: bytes) -> "Frame":
        n, tag, ctr, sender = HEADER.unpack_from(raw)
        payload = raw[HEADER_SIZE:]
        if len(payload) != n:
            raise TransportError("frame length mismatch")
        if tag >= len(TAGS):
            raise TransportError(f"unknown tag id {tag}")
        return cls(SessionId(TAGS[tag], ctr), sender, payload)


@dataclass
class ChannelStats:
    """Bytes on the wire (header included), split by phase and peer."""

    sent: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(int)))
    received: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(int)))
    frames_sent: int = 0
    rounds: int = 0

    def record_send(self, phase: str, peer: int, nbytes: int):
        self.sent[phase][peer] += nbytes
        self.frames_sent += 1

    def record_recv(self, phase: str, peer: int, nbytes: int):
        self.received[phase][peer] += nbytes

    def sent_bytes(self, phases=PHASES) -> int:
        if isinstance(phases, str):
            phases = (phases,)
        return sum(sum(self.sent[p].values()) for p in phases if p in self.sent)

    def received_bytes(self, phases=PHASES) -> int:
        if isinstance(phases, str):
            phases = (phases,)
        return sum(sum(self.received[p].values()) for p in phases if p in self.received)

    @property
    def bytes_by_phase(self) -> dict:
        return {p: self.sent_bytes(p) for p in PHASES}

    def offline_bytes(self) -> int:
        return self.sent_bytes(OFFLINE_PHASES)

    def online_bytes(self) -> int:
        return self.sent_bytes("online")

    def snapshot(self) -> dict:
        return {
            "sent": {p: dict(v) for p, v in self.sent.items()},
            "received": {p: dict(v) for p, v in self.received.items()},
            "frames": self.frames_sent,
            "rounds": self.rounds,
        }


class Lockstep:
    """Run three in-process parties one at a time, in a fixed order.

    A party holds the baton until it blocks on a missing message; the
    baton then moves round-robin to the next party still running.  The
    interleaving, and so every transcript, depends only on the inputs.
    If the baton goes round without any frame being sent, the waiting
    party gives up with a deadlock error.
    """

    def __init__(self, n: int = 3):
        self.cv = threading.Condition()
        self.turn = 0
        self.done_set: set = set()
        self.n = n
        self.sent = 0

    def _pass(self, me: int):
        for step in range(1, self.n + 1):
            cand = (me + step) % self.n
            if cand not in self.done_set:
                self.turn = cand
                break
        self.cv.notify_all()

    def enter(self, me: int):
        with self.cv:
            self.cv.wait_for(lambda: self.turn == me)

    def wait(self, me: int) -> bool:
        """Hand the baton on; False if nobody sent anything meanwhile."""
        with self.cv:
            before = self.sent
            self._pass(me)
            self.cv.wait_for(lambda: self.turn == me)
            return self.sent != before

    def note_send(self):
        self.sent += 1

    def leave(self, me: int):
        with self.cv:
            self.done_set.add(me)
            if self.turn == me:
                self._pass(me)


class Endpoint:
    """One party's view of its two channels.

    `links[peer]` is an object with put(bytes); `inbox[peer]` is a queue of
    raw frames (None marks a closed channel).
    """

    def __init__(self, party: int, links: dict, inbox: dict, timeout: float = 120.0,
                 delay_ms: float = 0.0, strict: bool = False, lockstep: Lockstep | None = None):
        self.party = party
        self.lockstep = lockstep
        self.links = links
        self.inbox = inbox
        self.timeout = timeout
        self.delay = delay_ms / 1000.0
        self.strict = strict
        self.phase = "setup"
        self.stats = ChannelStats()
        self.closed = False
        self._pending = {p: defaultdict(deque) for p in inbox}
        self._hash = {p: hashlib.sha256() for p in links}
        self._last_round_sid = None
        self.log: list[tuple[int, SessionId]] = []

    @property
    def peers(self):
        return sorted(self.links)

    def send(self, to: int, session: SessionId, payload: bytes):
        if not payload:
            raise ValueError("empty payload")
        if self.closed:
            raise TransportError("send on closed channel")
        raw = Frame(session, self.party, payload).encode()
        if self.delay:
            time.sleep(self.delay)
        try:
            self.links[to].put(raw)
        except (OSError, KeyError) as exc:
            self.closed = True
            raise TransportError(f"link to P{to} broken: {exc}") from exc
        if self.lockstep:
            self.lockstep.note_send()
        self.stats.record_send(self.phase, to, len(raw))
        if session != self._last_round_sid:
            self.stats.rounds += 1
            self._last_round_sid = session
        self._hash[to].update(raw)
        self.log.append((to, session))

    def recv(self, frm: int, session: SessionId) -> bytes:
        stash = self._pending[frm]
        if stash.get(session):
            frame = stash[session].popleft()
            return self._accept(frm, frame)
        deadline = time.monotonic() + self.timeout
        while True:
            if self.lockstep:
                try:
                    raw = self.inbox[frm].get_nowait()
                except queue.Empty:
                    self._drain_others(frm)
                    if not self.lockstep.wait(self.party):
                        self._drain_others(frm)
                        if self.inbox[frm].empty():
                            raise TransportError(f"deadlock waiting for P{frm} on {session}")
                    continue
            else:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TransportError(f"timed out waiting for P{frm} on {session}")
                try:
                    raw = self.inbox[frm].get(timeout=left)
                except queue.Empty:
                    continue
            frame = self._decode(frm, raw)
            if frame.session == session:
                return self._accept(frm, frame)
            if self.strict:
                raise TransportError(f"expected {session} from P{frm}, got {frame.session}")
            stash[frame.session].append(frame)

    def _decode(self, frm: int, raw) -> Frame:
        if raw is None:
            self.closed = True
            raise TransportError(f"P{frm} closed the channel")
        frame = Frame.decode(raw)
        if frame.sender != frm:
            raise TransportError("sender byte does not match channel")
        if frame.session.tag == "control":
            raise ProtocolAbort("peer-abort", f"P{frm}: {frame.payload.decode(errors='replace')}")
        return frame

    def _drain_others(self, frm: int):
        # in lockstep mode an abort notice from the other peer must not go unseen
        for peer, q in self.inbox.items():
            if peer == frm:
                continue
            while True:
                try:
                    raw = q.get_nowait()
                except queue.Empty:
                    break
                frame = self._decode(peer, raw)
                self._pending[peer][frame.session].append(frame)

    def _accept(self, frm: int, frame: Frame) -> bytes:
        self.stats.record_recv(self.phase, frm, HEADER_SIZE + frame.length)
        return frame.payload

    def abort(self, reason: str):
        """Tell both peers we are stopping; best effort."""
        if self.closed:
            return
        raw = Frame(SessionId("control", 0), self.party, reason.encode()[:200] or b"abort").encode()
        for link in self.links.values():
            try:
                link.put(raw)
            except Exception:
                pass
        if self.lockstep:
            self.lockstep.note_send()
        self.close()

    def close(self):
        if self.closed:
            return
        self.closed = True
        for link in self.links.values():
            close = getattr(link, "close", None)
            if close:
                close()

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for peer in sorted(self._hash):
            h.update(bytes([self.party, peer]))
            h.update(self._hash[peer].digest())
        return h.hexdigest()


class _QueueLink:
    def __init__(self, q: queue.Queue):
        self.q = q

    def put(self, raw: bytes):
        self.q.put(raw, timeout=60)


def local_network(timeout: float = 120.0, delay_ms: float = 0.0, maxsize: int = 4096,
                  strict: bool = False, lockstep: bool = False) -> list[Endpoint]:
    """Three endpoints wired together with in-process queues.

    With lockstep=True the parties must call `ep.lockstep.enter(i)` before
    running and `ep.lockstep.leave(i)` when finished; queues are then
    unbounded so a sender never blocks while holding the baton.
    """
    sched = Lockstep() if lockstep else None
    size = 0 if lockstep else maxsize
    qs = {(a, b): queue.Queue(size) for a in range(3) for b in range(3) if a != b}
    eps = []
    for me in range(3):
        peers = [p for p in range(3) if p != me]
        links = {p: _QueueLink(qs[(me, p)]) for p in peers}
        inbox = {p: qs[(p, me)] for p in peers}
        eps.append(Endpoint(me, links, inbox, timeout=timeout, delay_ms=delay_ms, strict=strict,
                            lockstep=sched))
    return eps


class _SocketLink:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.lock = threading.Lock()

    def put(self, raw: bytes):
        with self.lock:
            self.sock.sendall(raw)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def _reader(sock: socket.socket, q: queue.Queue):
    try:
        while True:
            hdr = _read_exact(sock, HEADER_SIZE)
            if hdr is None:
                break
            n = HEADER.unpack(hdr)[0]
            body = _read_exact(sock, n) if n else b""
            if body is None:
                break
            q.put(hdr + body)
    except OSError:
        pass
    q.put(None)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def tcp_endpoint(party: int, addrs: list[str], timeout: float = 120.0,
                 delay_ms: float = 0.0, connect_timeout: float = 30.0) -> Endpoint:
    """Connect party `party` to the other two.

    Lower ids listen and higher ids dial: P0<-P1, P0<-P2, P1<-P2.  The
    dialing side sends its id as a one-byte hello.
    """
    socks = {}
    listener = None
    expect = [p for p in range(3) if p > party]
    if expect:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(parse_addr(addrs[party]))
        listener.listen(2)
        listener.settimeout(connect_timeout)
    for p in range(party):
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                s = socket.create_connection(parse_addr(addrs[p]), timeout=connect_timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"cannot reach P{p} at {addrs[p]}")
                time.sleep(0.05)
        s.sendall(bytes([party]))
        socks[p] = s
    try:
        while len(socks) < 3 - 1:
            s, _ = listener.accept()
            s.settimeout(connect_timeout)
            hello = _read_exact(s, 1)
            if hello is None or hello[0] not in expect or hello[0] in socks:
                s.close()
                continue
            socks[hello[0]] = s
    except socket.timeout as exc:
        raise TransportError("peers did not connect in time") from exc
    finally:
        if listener:
            listener.close()
    links, inbox = {}, {}
    for p, s in socks.items():
        s.settimeout(None)
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        links[p] = _SocketLink(s)
        inbox[p] = queue.Queue()
        threading.Thread(target=_reader, args=(s, inbox[p]), daemon=True).start()
    return Endpoint(party, links, inbox, timeout=timeout, delay_ms=delay_ms)
