"""Benchmark harness: block claiming, worker orchestration, metrics, timing.

A run stores the block boundary table, spawns worker contexts (threads) that
communicate only through the store, arms a start barrier so every worker
begins computing at once, and times from barrier release until the last
worker finishes. Two coordination strategies exist: `locks` uses the
embedded backend's hierarchical locks (a held parent path gates the start;
the parent then sleeps on the bare `finished` path until every worker's
subscript is released), while `polling` re-reads flag nodes at a fixed
interval, which is all a plain wire backend can offer.

Workers claim blocks by atomic increment: the claimer that sees exactly 1
owns the block. Claim scans, barrier traffic and counter aggregation go
through unmetered nodes, so the reported read/update totals cover sequence
computation only.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, asdict

from .collatz import SequenceStore, next_term, sequence
from .keys import as_segment
from .locks import LockOwner
from .memstore import EmbeddedStore
from .store import AccessCounters, metered

NAMESPACE_ROOTS = (
    "step",
    "longest",
    "highest",
    "blocks",
    "trigger",
    "queued",
    "worker",
    "finished",
    "reads",
    "updates",
)

DEFAULT_POLL_INTERVAL = 0.1
DEFAULT_BLOCK_SIZE = 1000
DEFAULT_TXN_RETRY_LIMIT = 10_000


class BenchError(Exception):
    pass


class NamespaceNotEmpty(BenchError):
    """Benchmark keys pre-exist in the store and force_flush is off."""


class WorkerFailure(BenchError):
    """One or more workers died; carries their errors."""

    def __init__(self, errors):
        super().__init__("; ".join(f"worker {pid}: {err!r}" for pid, err in errors))
        self.errors = errors


@dataclass
class BenchConfig:
    backend: str = "embedded"  # embedded | resp
    addr: tuple = ("127.0.0.1", 6379)  # resp backend only
    workers: int = 1
    limit: int = 100_000
    block_size: int = DEFAULT_BLOCK_SIZE
    coordination: str | None = None  # locks | polling; default depends on backend
    poll_interval: float = DEFAULT_POLL_INTERVAL
    txn_retry_limit: int = DEFAULT_TXN_RETRY_LIMIT
    force_flush: bool = False

    def resolved_coordination(self) -> str:
        if self.coordination is not None:
            return self.coordination
        return "locks" if self.backend == "embedded" else "polling"

    def validate(self) -> None:
        if self.backend not in ("embedded", "resp"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.resolved_coordination() not in ("locks", "polling"):
            raise ValueError(f"unknown coordination {self.coordination!r}")
        if self.resolved_coordination() == "locks" and self.backend != "embedded":
            raise ValueError("coordination=locks requires the embedded backend")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.limit < 1:
            raise ValueError("limit must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")


@dataclass
class BenchReport:
    backend: str
    coordination: str
    workers: int
    limit: int
    block_size: int
    longest: int
    highest: int
    reads: int
    updates: int
    elapsed_s: float

    def as_dict(self) -> dict:
        return asdict(self)


class EventRecorder:
    """Thread-safe benchmark event log (claims, polls, barriers, retries)."""

    def __init__(self, path=None):
        self._mu = threading.Lock()
        self.events: list[dict] = []
        self._fh = open(path, "w") if path else None

    def emit(self, ev: str, **fields) -> None:
        record = {"ev": ev, "t": time.monotonic(), **fields}
        with self._mu:
            self.events.append(record)
            if self._fh is not None:
                self._fh.write(json.dumps(record) + "\n")

    def close(self) -> None:
        with self._mu:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def named(self, ev: str) -> list[dict]:
        with self._mu:
            return [e for e in self.events if e["ev"] == ev]


def make_blocks(limit: int, block_size: int) -> list[int]:
    """Boundary list 0, block_size, 2*block_size, ..., limit (last clamped)."""
    if limit < 1 or block_size < 1:
        raise ValueError("limit and block_size must be >= 1")
    boundaries = list(range(0, limit, block_size))
    boundaries.append(limit)
    return boundaries


def oracle(limit: int) -> tuple[int, int, dict[int, int]]:
    """Store-free brute force for starts 1..limit.

    Returns (longest, highest, steps_table) computed with the same walk
    semantics as the real benchmark: highest tracks computed next-terms
    only, records move only on strictly-greater, and the memo table lets
    later walks stop where trajectories meet.
    """
    steps_table: dict[int, int] = {}
    longest = 0
    highest = 0
    for start in range(1, limit + 1):
        n = start
        steps = 0
        peak = 0
        path = []
        while n not in steps_table and n > 1:
            path.append(n)
            n = next_term(n)
            if n > peak:
                peak = n
            steps += 1
        if steps == 0:
            continue
        if n > 1:
            steps += steps_table[n]
        if steps > longest:
            longest = steps
        if peak > highest:
            highest = peak
        for i, value in enumerate(path):
            steps_table[value] = steps - i
    return longest, highest, steps_table


def instrumented_counts(limit: int) -> tuple[int, int]:
    """Expected single-worker (reads, updates) for a run over 1..limit.

    An independent count oracle: it mirrors the metered access pattern of
    the walk (a memo probe per loop entry, the junction re-read, the two
    record reads, conditional record writes, one write per logged value)
    against a plain dict, never touching the store code.
    """
    steps_table: dict[int, int] = {}
    longest = 0
    highest = 0
    reads = 0
    updates = 0
    for start in range(1, limit + 1):
        n = start
        steps = 0
        peak = 0
        path = []
        while True:
            reads += 1  # memo probe, counted even when it hits or n == 1
            if n in steps_table or n <= 1:
                break
            path.append(n)
            n = next_term(n)
            if n > peak:
                peak = n
            steps += 1
        if steps == 0:
            continue
        if n > 1:
            reads += 1  # the junction entry is read again when added
            steps += steps_table[n]
        reads += 1  # longest
        if steps > longest:
            longest = steps
            updates += 1
        reads += 1  # highest
        if peak > highest:
            highest = peak
            updates += 1
        for i, value in enumerate(path):
            steps_table[value] = steps - i
            updates += 1
    return reads, updates


def check_steps_table(store, steps_table: dict[int, int]) -> list[str]:
    """Replay-verify a post-run memo table against the brute-force oracle.

    Every stored entry must replay to exactly 1 in exactly its step count,
    and the stored entry count must equal the number of entries found under
    the oracle's keys (the stored table is always a subset of the oracle's,
    so a count mismatch means an entry at an impossible key).
    """
    problems = []
    step = store.node("step")
    found = 0
    for start, expected in steps_table.items():
        raw = step.child(start).get()
        if raw is None:
            continue
        found += 1
        count = int(raw)
        n = start
        for _ in range(count):
            n = 3 * n + 1 if n & 1 else n >> 1
        if n != 1:
            problems.append(f"step[{start}]={count} replays to {n}, not 1")
    stored = step.subtree_size()
    if stored != found:
        problems.append(
            f"step table holds {stored} entries but only {found} lie on known trajectories"
        )
    return problems


def _default_sequence(n: int, view: SequenceStore) -> None:
    sequence(n, view)


class _Run:
    """One benchmark execution: parent context plus worker threads."""

    def __init__(self, config, parent_store, worker_store, close_worker, sequence_fn, events):
        self.config = config
        self.coordination = config.resolved_coordination()
        self.parent_store = parent_store
        self.worker_store = worker_store
        self.close_worker = close_worker
        self.sequence_fn = sequence_fn
        self.events = events
        self.errors: list[tuple[int, BaseException]] = []
        self.errors_mu = threading.Lock()
        self.abort = threading.Event()

    def _emit(self, ev, **fields):
        if self.events is not None:
            self.events.emit(ev, **fields)

    def _record_error(self, pid, exc):
        with self.errors_mu:
            self.errors.append((pid, exc))

    def _check_failures(self):
        with self.errors_mu:
            if self.errors:
                raise WorkerFailure(list(self.errors))

    # -- parent side ---------------------------------------------------------

    def manage_workers(self, boundaries) -> float:
        config = self.config
        store = self.parent_store
        locks_mode = self.coordination == "locks"
        store.node("blocks").set_tree({i + 1: b for i, b in enumerate(boundaries)})
        parent_owner = LockOwner("manage-workers")
        if locks_mode:
            store.locks.grab((b"trigger",), parent_owner)
        else:
            store.node("trigger").set(0)
        store.node("queued").set(config.workers)
        if not locks_mode:
            store.node("worker").delete_tree()
        threads = [
            threading.Thread(
                target=self._subprocess_entry, args=(pid,), name=f"bench-worker-{pid}"
            )
            for pid in range(1, config.workers + 1)
        ]
        for t in threads:
            t.start()
        try:
            queued = store.node("queued")
            while queued.get() != b"0":  # wait for all jobs to start
                self._check_failures()
                self._emit("poll", node="queued", who="parent")
                time.sleep(config.poll_interval)
            if locks_mode:
                store.locks.release((b"trigger",), parent_owner)
            else:
                store.node("trigger").set(1)
            self._emit("barrier_release")
            start = time.perf_counter()
            if locks_mode:
                store.locks.grab((b"finished",), parent_owner)
                store.locks.release((b"finished",), parent_owner)
                elapsed = time.perf_counter() - start
                self._check_failures()
            else:
                worker_table = store.node("worker")
                while worker_table.subtree_size() != 0:
                    self._check_failures()
                    self._emit("poll", node="worker", who="parent")
                    time.sleep(config.poll_interval)
                elapsed = time.perf_counter() - start
            self._emit("all_finished")
        except BaseException:
            self.abort.set()
            if locks_mode:
                store.locks.release_all(parent_owner)
            else:
                try:
                    store.node("trigger").set(1)
                except Exception:
                    pass
            for t in threads:
                t.join(timeout=30)
            raise
        for t in threads:
            t.join()
        self._check_failures()
        return elapsed

    # -- worker side -----------------------------------------------------------

    def _subprocess_entry(self, pid: int) -> None:
        owner = LockOwner(f"worker-{pid}", alive=threading.current_thread().is_alive)
        wstore = None
        try:
            wstore = self.worker_store()
            if self.events is not None:
                wstore.txn_retry_hook = lambda attempt: self.events.emit(
                    "txn_retry", attempt=attempt, worker=pid
                )
            self._subprocess(pid, owner, wstore)
        except BaseException as exc:  # noqa: BLE001 - reported to the parent
            self._record_error(pid, exc)
        finally:
            if self.coordination == "locks":
                self.parent_store.locks.release_all(owner)
            if wstore is not None:
                self.close_worker(wstore)

    def _subprocess(self, pid: int, owner: LockOwner, wstore) -> None:
        config = self.config
        locks_mode = self.coordination == "locks"
        locks = self.parent_store.locks if locks_mode else None
        counters = AccessCounters()
        view = SequenceStore(
            step=metered(wstore.node("step"), counters),
            longest=metered(wstore.node("longest"), counters),
            highest=metered(wstore.node("highest"), counters),
            transaction=wstore.transaction,
        )
        pid_seg = as_segment(pid)
        if locks_mode:
            locks.grab((b"finished", pid_seg), owner)
        else:
            wstore.node("worker").child(pid).set(1)
        self._emit("worker_registered", worker=pid)
        wstore.node("queued").incr(-1)  # flag ready to start
        if locks_mode:
            locks.grab((b"trigger", pid_seg), owner)
            locks.release((b"trigger", pid_seg), owner)
        else:
            trigger = wstore.node("trigger")
            while trigger.get() != b"1":
                if self.abort.is_set():
                    break
                self._emit("poll", node="trigger", worker=pid)
                time.sleep(config.poll_interval)
        if not self.abort.is_set():
            self._next_block(pid, view, wstore)
            wstore.node("reads").incr(counters.reads)
            wstore.node("updates").incr(counters.updates)
        self._emit("worker_done", worker=pid)
        if locks_mode:
            locks.release((b"finished", pid_seg), owner)  # flag finished
        else:
            wstore.node("worker").child(pid).delete_tree()

    def _next_block(self, pid: int, view: SequenceStore, wstore) -> None:
        """Claim and compute every block still unclaimed (the scan restarts
        from 1 so late workers help with whatever is left)."""
        blocks = wstore.node("blocks")
        hierarchical = getattr(wstore, "hierarchical", False)
        index = 1
        while blocks.child(index + 1).get() is not None:
            if hierarchical:
                marker = blocks.child(index).child("taken")
            else:
                marker = blocks.child(f"{index}-taken")
            if marker.incr(1) == 1:
                first = int(blocks.child(index).get()) + 1
                last = int(blocks.child(index + 1).get())
                self._emit("claim", worker=pid, block=index, first=first, last=last)
                for n in range(first, last + 1):
                    self.sequence_fn(n, view)
            index += 1


def _ensure_fresh(store, force_flush: bool) -> None:
    dirty = []
    for root in NAMESPACE_ROOTS:
        node = store.node(root)
        if node.get() is not None or node.subtree_size() > 0:
            dirty.append(root)
    if not dirty:
        return
    if not force_flush:
        raise NamespaceNotEmpty(
            f"benchmark keys already present: {', '.join(dirty)} (use force_flush)"
        )
    for root in dirty:
        store.node(root).delete_tree()


def run_bench(config: BenchConfig, store=None, sequence_fn=None, events=None) -> BenchReport:
    """Execute one full benchmark run and report the paper's metrics.

    `store` may supply a pre-built EmbeddedStore (embedded backend only);
    `sequence_fn(n, view)` overrides the computation per start, which the
    metering-exclusion tests use; `events` collects the structured log.
    """
    config.validate()
    coordination = config.resolved_coordination()
    if sequence_fn is None:
        sequence_fn = _default_sequence

    if config.backend == "embedded":
        shared = store if store is not None else EmbeddedStore(config.txn_retry_limit)
        parent_store = shared

        def worker_store():
            return shared

        def close_worker(_s):
            return None

        def close_parent():
            return None

    else:
        if store is not None:
            raise ValueError("a pre-built store only applies to the embedded backend")
        from .respclient import RespClient

        host, port = config.addr
        parent_store = RespClient(host, port, txn_retry_limit=config.txn_retry_limit)

        def worker_store():
            return RespClient(host, port, txn_retry_limit=config.txn_retry_limit)

        def close_worker(s):
            s.close()

        def close_parent():
            parent_store.close()

    try:
        if events is not None:
            parent_store.txn_retry_hook = lambda attempt: events.emit("txn_retry", attempt=attempt)
        _ensure_fresh(parent_store, config.force_flush)
        boundaries = make_blocks(config.limit, config.block_size)
        run = _Run(config, parent_store, worker_store, close_worker, sequence_fn, events)
        elapsed = run.manage_workers(boundaries)
        report = BenchReport(
            backend=config.backend,
            coordination=coordination,
            workers=config.workers,
            limit=config.limit,
            block_size=config.block_size,
            longest=int(parent_store.node("longest").get(b"0")),
            highest=int(parent_store.node("highest").get(b"0")),
            reads=int(parent_store.node("reads").get(b"0")),
            updates=int(parent_store.node("updates").get(b"0")),
            elapsed_s=elapsed,
        )
        return report
    finally:
        close_parent()
