"""Backend-neutral store surface: node handles, access metering, errors.

A Node binds a Key and its cached path encoding to one backend. Deriving a
child handle appends a single encoded segment to the parent's buffer rather
than re-encoding the whole path. MeteredNode wraps any node so that get/set/
incr also bump a per-worker AccessCounters; coordination traffic goes through
plain (unmetered) nodes and never shows up in benchmark totals.
"""

from __future__ import annotations

from .keys import Key, encode_segment


class StoreError(Exception):
    """Base class for store-level failures on either backend."""


class ReplyError(StoreError):
    """Error reply surfaced by the wire server."""


class TxnRetryError(StoreError):
    """Transaction gave up after exhausting its retry budget."""

    def __init__(self, attempts: int):
        super().__init__(f"transaction aborted after {attempts} attempts")
        self.attempts = attempts


class AccessCounters:
    """Per-worker tallies of metered reads and updates.

    Owned by exactly one worker context; aggregated into the shared store
    once, at worker exit.
    """

    __slots__ = ("reads", "updates")

    def __init__(self):
        self.reads = 0
        self.updates = 0

    def __repr__(self):
        return f"AccessCounters(reads={self.reads}, updates={self.updates})"


class Node:
    """Handle to one database node: a Key plus its cached path encoding.

    Immutable after creation and safe to share across worker contexts.
    Subclasses bind the handle to a concrete backend.
    """

    __slots__ = ("key", "encoded", "parent_encoded")

    def __init__(self, key: Key):
        self.key = key
        if key.subscripts:
            self.parent_encoded = b"".join(encode_segment(s) for s in key.path[:-1])
            self.encoded = self.parent_encoded + encode_segment(key.subscripts[-1])
        else:
            self.parent_encoded = b""
            self.encoded = encode_segment(key.varname)

    def _derive(self, key: Key, parent_encoded: bytes, encoded: bytes) -> "Node":
        raise NotImplementedError

    def child(self, sub) -> "Node":
        key = self.key.child(sub)
        encoded = self.encoded + encode_segment(key.subscripts[-1])
        return self._derive(key, self.encoded, encoded)

    # Backend operations. Values are byte strings; get() returns bytes or the
    # default; incr() returns the post-increment integer.

    def get(self, default: bytes | None = None) -> bytes | None:
        raise NotImplementedError

    def set(self, value) -> None:
        raise NotImplementedError

    def incr(self, delta: int = 1) -> int:
        raise NotImplementedError

    def delete_tree(self) -> None:
        raise NotImplementedError

    def set_tree(self, entries) -> None:
        raise NotImplementedError

    def subtree_size(self) -> int:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.key!r})"


class MeteredNode:
    """Wrap a node so get/set/incr also count into an AccessCounters.

    get counts one read; set and incr count one update. Everything else,
    including derived children, behaves exactly like the wrapped node;
    children share the same counters.
    """

    __slots__ = ("_inner", "counters")

    def __init__(self, inner, counters: AccessCounters):
        self._inner = inner
        self.counters = counters

    @property
    def key(self):
        return self._inner.key

    @property
    def encoded(self):
        return self._inner.encoded

    def child(self, sub) -> "MeteredNode":
        return MeteredNode(self._inner.child(sub), self.counters)

    def get(self, default: bytes | None = None) -> bytes | None:
        self.counters.reads += 1
        return self._inner.get(default)

    def set(self, value) -> None:
        self.counters.updates += 1
        self._inner.set(value)

    def incr(self, delta: int = 1) -> int:
        self.counters.updates += 1
        return self._inner.incr(delta)

    def delete_tree(self) -> None:
        self._inner.delete_tree()

    def set_tree(self, entries) -> None:
        self._inner.set_tree(entries)

    def subtree_size(self) -> int:
        return self._inner.subtree_size()

    def __repr__(self):
        return f"MeteredNode({self._inner!r})"


def metered(node, counters: AccessCounters) -> MeteredNode:
    """Return a counting wrapper around `node` (see MeteredNode)."""
    return MeteredNode(node, counters)


def parse_int(raw: bytes) -> int:
    """Parse a stored decimal value, mapping garbage to a StoreError."""
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise StoreError(f"value is not an integer: {raw!r}") from None
