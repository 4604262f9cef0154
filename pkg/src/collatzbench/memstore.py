"""In-process shared hierarchical store with optimistic transactions.

CellMap is the versioned substrate: a flat map from encoded node paths to
(value, version) cells guarded by one mutex. Version stamps come from a
single monotonic clock, so a cell's version strictly increases across
writes and a deleted cell can simply be dropped: any later recreation gets
a stamp larger than anything an observer may have recorded, and absence
always reads as version 0. A per-root touch counter supports key-level
WATCH in the wire server.

EmbeddedStore puts the Node/transaction interface on top. Transactions are
optimistic and restartable: the body runs against a thread-local view that
records the version of every cell it reads and buffers its writes; commit
re-validates all read versions under the map mutex and applies the writes
atomically, re-executing the body from scratch on any mismatch. Individual
node operations are linearizable (single mutex hold); no lock spans a user
operation except the commit step of a transaction.
"""

from __future__ import annotations

import random
import threading
import time

from .keys import as_value
from .store import Node, StoreError, TxnRetryError, parse_int

DEFAULT_TXN_RETRY_LIMIT = 10_000
_EAGER_RETRIES = 4  # conflict retries before backing off with randomized yields


class CellMap:
    """Versioned (value, version) cells keyed by encoded node path.

    Methods suffixed _u assume the caller holds `mu`. The child-count index
    tracks, per parent path, how many immediate children currently hold a
    value, keeping subtree_size O(1).
    """

    def __init__(self):
        self.mu = threading.Lock()
        self._cells: dict[bytes, tuple[bytes, int]] = {}
        self._kids: dict[bytes, int] = {}
        self._roots: dict[bytes, int] = {}
        self._verclock = 0

    def read_u(self, enc: bytes) -> tuple[bytes | None, int]:
        cell = self._cells.get(enc)
        return (None, 0) if cell is None else cell

    def write_u(self, enc: bytes, parent: bytes, root: bytes, value: bytes) -> None:
        self._verclock += 1
        if enc not in self._cells:
            self._kids[parent] = self._kids.get(parent, 0) + 1
        self._cells[enc] = (value, self._verclock)
        self._roots[root] = self._roots.get(root, 0) + 1

    def remove_u(self, enc: bytes, parent: bytes, root: bytes) -> bool:
        """Drop one cell's value (descendants untouched)."""
        if enc not in self._cells:
            return False
        del self._cells[enc]
        self._drop_kid_u(parent)
        self._roots[root] = self._roots.get(root, 0) + 1
        return True

    def remove_subtree_u(self, enc: bytes, parent: bytes, root: bytes) -> int:
        """Drop a node's value and every descendant; returns values removed."""
        had_top = enc in self._cells
        doomed = [k for k in self._cells if k.startswith(enc)]
        for k in doomed:
            del self._cells[k]
        for k in [k for k in self._kids if k.startswith(enc)]:
            del self._kids[k]
        if had_top:
            self._drop_kid_u(parent)
        if doomed:
            self._roots[root] = self._roots.get(root, 0) + 1
        return len(doomed)

    def incr_u(self, enc: bytes, parent: bytes, root: bytes, delta: int) -> int:
        value, _ = self.read_u(enc)
        new = delta if value is None else parse_int(value) + delta
        self.write_u(enc, parent, root, b"%d" % new)
        return new

    def child_count_u(self, enc: bytes) -> int:
        return self._kids.get(enc, 0)

    def root_version_u(self, root: bytes) -> int:
        return self._roots.get(root, 0)

    def flush_all_u(self) -> None:
        self._cells.clear()
        self._kids.clear()
        for root in self._roots:
            self._roots[root] += 1

    def _drop_kid_u(self, parent: bytes) -> None:
        n = self._kids.get(parent, 0) - 1
        if n > 0:
            self._kids[parent] = n
        else:
            self._kids.pop(parent, None)


class _TxnState:
    """Read versions and buffered writes of one in-flight transaction."""

    __slots__ = ("reads", "writes", "order")

    def __init__(self):
        self.reads: dict[bytes, tuple[bytes | None, int]] = {}
        self.writes: dict[bytes, tuple[bytes, bytes, bytes]] = {}  # enc -> (parent, root, value)
        self.order: list[bytes] = []


class EmbeddedNode(Node):
    """Node handle bound to an EmbeddedStore."""

    __slots__ = ("store",)

    def __init__(self, store: "EmbeddedStore", key):
        super().__init__(key)
        self.store = store

    def _derive(self, key, parent_encoded, encoded):
        node = EmbeddedNode.__new__(EmbeddedNode)
        node.key = key
        node.parent_encoded = parent_encoded
        node.encoded = encoded
        node.store = self.store
        return node

    def get(self, default: bytes | None = None) -> bytes | None:
        value = self.store._get(self.encoded)
        return default if value is None else value

    def set(self, value) -> None:
        self.store._set(self.encoded, self.parent_encoded, self.key.varname, as_value(value))

    def incr(self, delta: int = 1) -> int:
        return self.store._incr(self.encoded, self.parent_encoded, self.key.varname, delta)

    def delete_tree(self) -> None:
        self.store._delete_tree(self.encoded, self.parent_encoded, self.key.varname)

    def set_tree(self, entries) -> None:
        items = [(self.child(k), as_value(v)) for k, v in entries.items()]
        self.store._set_tree(items, self.key.varname)

    def subtree_size(self) -> int:
        return self.store._subtree_size(self.encoded)


class EmbeddedStore:
    """The in-process backend: shared cell map, transactions, and locks.

    Safe for concurrent callers; each worker thread may run its own
    transaction. The hierarchical lock table rides along on the same store
    object so embedded-backend coordination can use it.
    """

    hierarchical = True

    def __init__(self, txn_retry_limit: int = DEFAULT_TXN_RETRY_LIMIT):
        self.cells = CellMap()
        self.txn_retry_limit = txn_retry_limit
        self.txn_retry_hook = None  # callable(attempt) for observability
        self._tls = threading.local()
        self._locks = None

    @property
    def locks(self):
        # created lazily so plain key-value use never pays for it
        if self._locks is None:
            from .locks import LockTable

            self._locks = LockTable()
        return self._locks

    def node(self, varname, *subscripts) -> EmbeddedNode:
        from .keys import Key

        return EmbeddedNode(self, Key(varname, subscripts))

    # -- node operation plumbing -------------------------------------------

    def _txn(self) -> _TxnState | None:
        return getattr(self._tls, "txn", None)

    def _get(self, enc: bytes) -> bytes | None:
        txn = self._txn()
        if txn is not None:
            if enc in txn.writes:
                return txn.writes[enc][2]
            if enc in txn.reads:
                return txn.reads[enc][0]
            with self.cells.mu:
                value, ver = self.cells.read_u(enc)
            txn.reads[enc] = (value, ver)
            return value
        with self.cells.mu:
            return self.cells.read_u(enc)[0]

    def _set(self, enc: bytes, parent: bytes, root: bytes, value: bytes) -> None:
        txn = self._txn()
        if txn is not None:
            if enc not in txn.writes:
                txn.order.append(enc)
            txn.writes[enc] = (parent, root, value)
            return
        with self.cells.mu:
            self.cells.write_u(enc, parent, root, value)

    def _incr(self, enc: bytes, parent: bytes, root: bytes, delta: int) -> int:
        txn = self._txn()
        if txn is not None:
            value = self._get(enc)
            new = delta if value is None else parse_int(value) + delta
            self._set(enc, parent, root, b"%d" % new)
            return new
        with self.cells.mu:
            return self.cells.incr_u(enc, parent, root, delta)

    def _delete_tree(self, enc: bytes, parent: bytes, root: bytes) -> None:
        self._no_txn("delete_tree")
        with self.cells.mu:
            self.cells.remove_subtree_u(enc, parent, root)

    def _set_tree(self, items, root: bytes) -> None:
        self._no_txn("set_tree")
        with self.cells.mu:
            for node, value in items:
                self.cells.write_u(node.encoded, node.parent_encoded, root, value)

    def _subtree_size(self, enc: bytes) -> int:
        self._no_txn("subtree_size")
        with self.cells.mu:
            return self.cells.child_count_u(enc)

    def _no_txn(self, opname: str) -> None:
        if self._txn() is not None:
            raise StoreError(f"{opname} is not supported inside a transaction")

    # -- transactions --------------------------------------------------------

    def transaction(self, body, retry_limit: int | None = None):
        """Run `body(store)` atomically; re-executes it on write conflicts.

        The body must be restartable: any effect outside the store may
        happen more than once. Returns the body's result from the attempt
        that committed.
        """
        if self._txn() is not None:
            return body(self)  # nested: flatten into the enclosing transaction
        limit = self.txn_retry_limit if retry_limit is None else retry_limit
        for attempt in range(1, limit + 1):
            txn = _TxnState()
            self._tls.txn = txn
            try:
                result = body(self)
            finally:
                self._tls.txn = None
            if self._commit(txn):
                return result
            if self.txn_retry_hook is not None:
                self.txn_retry_hook(attempt)
            if attempt > _EAGER_RETRIES:
                time.sleep(random.uniform(0, 0.001))
        raise TxnRetryError(limit)

    def _commit(self, txn: _TxnState) -> bool:
        with self.cells.mu:
            for enc, (_value, ver) in txn.reads.items():
                if self.cells.read_u(enc)[1] != ver:
                    return False
            for enc in txn.order:
                parent, root, value = txn.writes[enc]
                self.cells.write_u(enc, parent, root, value)
        return True
