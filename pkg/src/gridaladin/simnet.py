"""In-process CE <-> agent transport with float-level message accounting.

Agents never touch each other's data: every value crossing the boundary is
wrapped in a :class:`Message`, routed through a :class:`Transport` and
counted in its :class:`MessageLedger`.  Work performed on the agent side is
dispatched with :meth:`Transport.exchange`, which runs the agents either
sequentially or on a thread pool and routes their outgoing messages in agent
order once all of them finished, so both modes produce identical ledgers.
"""

from __future__ import annotations

import threading
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AuditError, ProtocolError

CE = "ce"
KINDS = ("setup", "fwd_sensitivities", "bwd_dual", "admm_fwd", "admm_bwd")


def agent_id(i: int) -> str:
    return f"agent:{i}"


def count_floats(payload: dict) -> int:
    """Number of scalars carried by a payload (arrays by size, scalars as 1)."""
    total = 0
    for value in payload.values():
        total += int(np.size(value))
    return total


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    kind: str
    payload: dict
    iteration: int
    float_count: int = field(default=-1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")
        object.__setattr__(self, "float_count", count_floats(self.payload))

    @property
    def direction(self) -> str:
        return "fwd" if self.receiver == CE else "bwd"


@dataclass
class LedgerEntry:
    iteration: int
    sender: str
    receiver: str
    kind: str
    float_count: int

    @property
    def phase(self) -> str:
        return "setup" if self.kind == "setup" else "online"

    @property
    def direction(self) -> str:
        return "fwd" if self.receiver == CE else "bwd"

    @property
    def agent(self) -> str:
        return self.sender if self.receiver == CE else self.receiver


class MessageLedger:
    """Append-only record of every routed message."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def record(self, msg: Message) -> None:
        self.entries.append(
            LedgerEntry(msg.iteration, msg.sender, msg.receiver, msg.kind, msg.float_count)
        )

    def online(self) -> list[LedgerEntry]:
        return [e for e in self.entries if e.phase == "online"]

    def per_iteration(self) -> dict[int, dict[str, int]]:
        """``{iteration: {"fwd": floats, "bwd": floats}}`` over online messages."""
        out: dict[int, dict[str, int]] = defaultdict(lambda: {"fwd": 0, "bwd": 0})
        for e in self.online():
            out[e.iteration][e.direction] += e.float_count
        return dict(sorted(out.items()))

    def totals(self) -> dict[str, int]:
        tot = {"setup_fwd": 0, "setup_bwd": 0, "online_fwd": 0, "online_bwd": 0}
        for e in self.entries:
            tot[f"{e.phase}_{e.direction}"] += e.float_count
        return tot

    def per_agent(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = defaultdict(lambda: {"fwd": 0, "bwd": 0})
        for e in self.online():
            out[e.agent][e.direction] += e.float_count
        return dict(out)

    def rows(self):
        for e in self.entries:
            yield (e.iteration, e.sender, e.receiver, e.kind, e.phase, e.direction, e.float_count)

    CSV_HEADER = ["iteration", "sender", "receiver", "kind", "phase", "direction", "floats"]

    def to_csv(self, path) -> None:
        from .data import write_csv

        write_csv(path, self.CSV_HEADER, self.rows())

    def __eq__(self, other):
        return isinstance(other, MessageLedger) and list(self.rows()) == list(other.rows())

    def __len__(self):
        return len(self.entries)


class Transport:
    """Exactly-once, per-pair FIFO delivery between registered endpoints.

    ``mode="seq"`` runs agent work in a loop; ``mode="par"`` uses a thread
    pool with one worker per agent (capped by ``max_workers``).
    """

    def __init__(self, mode: str = "seq", max_workers: int | None = None):
        if mode not in ("seq", "par"):
            raise ValueError(f"transport mode must be 'seq' or 'par', got {mode!r}")
        self.mode = mode
        self.max_workers = max_workers
        self.ledger = MessageLedger()
        self._inbox: dict[str, deque] = {}
        self._lock = threading.Lock()
        self._pool: ThreadPoolExecutor | None = None
        self.register(CE)

    def register(self, endpoint: str) -> None:
        self._inbox.setdefault(endpoint, deque())

    def reset_ledger(self) -> None:
        self.ledger = MessageLedger()

    def route(self, msg: Message) -> None:
        for ep in (msg.sender, msg.receiver):
            if ep not in self._inbox:
                raise ProtocolError(f"unknown endpoint {ep!r}")
        with self._lock:
            self._inbox[msg.receiver].append(msg)
            self.ledger.record(msg)

    def send(self, sender, receiver, kind, payload, iteration) -> Message:
        msg = Message(sender, receiver, kind, payload, iteration)
        self.route(msg)
        return msg

    def receive(self, endpoint: str, kind: str | None = None) -> Message:
        box = self._inbox.get(endpoint)
        if box is None:
            raise ProtocolError(f"unknown endpoint {endpoint!r}")
        if not box:
            raise ProtocolError(f"no pending message for {endpoint!r}")
        msg = box.popleft()
        if kind is not None and msg.kind != kind:
            raise ProtocolError(f"{endpoint!r} expected {kind!r}, got {msg.kind!r}")
        return msg

    def drain(self, endpoint: str) -> list[Message]:
        box = self._inbox[endpoint]
        out = list(box)
        box.clear()
        return out

    def gather(self, senders: Sequence[str], kind: str) -> list[Message]:
        """CE-side barrier: one message of ``kind`` from each sender, in sender order."""
        pending = self.drain(CE)
        by_sender: dict[str, deque] = defaultdict(deque)
        for m in pending:
            by_sender[m.sender].append(m)
        out = []
        for s in senders:
            q = by_sender.get(s)
            if not q:
                raise ProtocolError(f"missing {kind!r} payload from {s!r}")
            m = q.popleft()
            if m.kind != kind:
                raise ProtocolError(f"expected {kind!r} from {s!r}, got {m.kind!r}")
            out.append(m)
        leftover = [m for q in by_sender.values() for m in q]
        self._inbox[CE].extend(leftover)
        return out

    def exchange(self, work: Callable[[int, list[Message]], Iterable[Message]], agents: Sequence[int]):
        """Run ``work(i, inbox_i)`` for every agent; route the returned messages in agent order."""
        inboxes = [self.drain(agent_id(i)) for i in agents]
        if self.mode == "seq" or len(agents) <= 1:
            outs = [list(work(i, box)) for i, box in zip(agents, inboxes)]
        else:
            pool = self._executor(len(agents))
            futures = [pool.submit(lambda i=i, b=b: list(work(i, b))) for i, b in zip(agents, inboxes)]
            outs = [f.result() for f in futures]
        for out in outs:
            for msg in out:
                self.route(msg)

    def _executor(self, n):
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.max_workers or n)
        return self._pool

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def tree_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Fixed-order pairwise reduction; identical bits regardless of who computed the terms."""
    items = [np.asarray(v, dtype=float) for v in vectors]
    if not items:
        raise ValueError("tree_sum needs at least one term")
    while len(items) > 1:
        nxt = [items[j] + items[j + 1] for j in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


@dataclass
class AuditReport:
    ok: bool
    checked: int
    mismatches: list[tuple]
    totals: dict

    def raise_for_status(self):
        if not self.ok:
            head = ", ".join(str(m) for m in self.mismatches[:5])
            raise AuditError(f"{len(self.mismatches)} ledger mismatches: {head}")


def audit(ledger: MessageLedger, expected: Callable[[LedgerEntry], int | None]) -> AuditReport:
    """Compare each online message with ``expected(entry)`` (``None`` skips the entry)."""
    mismatches = []
    checked = 0
    for e in ledger.online():
        want = expected(e)
        if want is None:
            continue
        checked += 1
        if want != e.float_count:
            mismatches.append((e.iteration, e.sender, e.receiver, e.kind, e.float_count, want))
    return AuditReport(not mismatches, checked, mismatches, ledger.totals())


def aladin_expected(N: int, n_act: dict[tuple[int, int], int]):
    """Expected per-message counts: ``(3 + n_act) N + 2`` up, ``N + 1`` down.

    ``n_act`` maps ``(iteration, agent index)`` to that agent's number of
    active rows.
    """

    def expected(e: LedgerEntry):
        if e.kind == "fwd_sensitivities":
            i = int(e.sender.split(":")[1])
            return (3 + n_act[(e.iteration, i)]) * N + 2
        if e.kind == "bwd_dual":
            return N + 1
        return None

    return expected


def admm_expected(N: int):
    def expected(e: LedgerEntry):
        if e.kind in ("admm_fwd", "admm_bwd"):
            return N
        return None

    return expected
