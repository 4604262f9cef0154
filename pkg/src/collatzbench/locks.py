"""Hierarchical lock table with prefix conflicts and owner-death auto-release.

Two lock paths conflict iff one is a prefix of the other (equal paths
conflict). A held parent path therefore blocks any grab of its subscripts,
and a grab of a bare path blocks until every held subscript of it has been
released. Waiters are served in FIFO ticket order within a conflict class,
so a blocked parent grab cannot be starved by a churn of child grabs.

Locks owned by a dead worker context are released automatically: the worker
lifecycle calls release_all on exit (normal or not), and as a safety net the
table reaps locks whose owner's alive() predicate has gone false whenever a
grab is attempted or a waiter wakes up.
"""

from __future__ import annotations

import itertools
import threading
import time

_REAP_INTERVAL = 0.05  # how often a blocked grab re-checks for dead owners


class LockError(Exception):
    """Lock protocol misuse (bad release, self-conflicting grab)."""


class LockOwner:
    """Identity of one worker context for lock ownership.

    `alive` is an optional zero-argument predicate (typically the worker
    thread's is_alive); once it returns False the owner's locks become
    reapable.
    """

    __slots__ = ("name", "_alive")

    def __init__(self, name: str, alive=None):
        self.name = name
        self._alive = alive

    def alive(self) -> bool:
        return True if self._alive is None else bool(self._alive())

    def __repr__(self):
        return f"LockOwner({self.name!r})"


def conflicts(a: tuple, b: tuple) -> bool:
    """True iff one path is a prefix of the other (equal paths conflict)."""
    shorter = min(len(a), len(b))
    return a[:shorter] == b[:shorter]


class LockTable:
    """In-process hierarchical lock manager shared by all worker contexts."""

    def __init__(self):
        self._cv = threading.Condition()
        self._held: dict[tuple, LockOwner] = {}
        self._waiters: list[list] = []  # [ticket, path, owner] in FIFO order
        self._tickets = itertools.count()

    def grab(self, path: tuple, owner: LockOwner, timeout: float | None = None) -> bool:
        """Block until `path` can be held by `owner`, or until timeout.

        Re-grabbing the exact path already held by this owner succeeds as a
        no-op. Requesting a path that conflicts with a *different* path this
        owner already holds would self-deadlock and raises LockError.
        """
        path = tuple(path)
        deadline = None if timeout is None else timeout + time.monotonic()
        with self._cv:
            if self._held.get(path) is owner:
                return True
            for held_path, held_owner in self._held.items():
                if held_owner is owner and conflicts(held_path, path):
                    raise LockError(
                        f"{owner.name} already holds {held_path!r}, "
                        f"which conflicts with {path!r}"
                    )
            entry = [next(self._tickets), path, owner]
            self._waiters.append(entry)
            try:
                while True:
                    self._reap_dead()
                    if self._grantable(entry):
                        self._held[path] = owner
                        return True
                    if deadline is None:
                        self._cv.wait(_REAP_INTERVAL)
                    else:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0:
                            return False
                        self._cv.wait(min(remaining, _REAP_INTERVAL))
            finally:
                self._waiters.remove(entry)
                self._cv.notify_all()

    def _grantable(self, entry) -> bool:
        ticket, path, _owner = entry
        for held_path in self._held:
            if conflicts(held_path, path):
                return False
        for other in self._waiters:
            if other[0] < ticket and conflicts(other[1], path):
                return False
        return True

    def release(self, path: tuple, owner: LockOwner) -> None:
        """Release a lock this owner holds; wake eligible waiters."""
        path = tuple(path)
        with self._cv:
            if self._held.get(path) is not owner:
                raise LockError(f"{owner.name} does not hold {path!r}")
            del self._held[path]
            self._cv.notify_all()

    def release_all(self, owner: LockOwner) -> int:
        """Release every lock held by `owner` (worker-exit cleanup)."""
        with self._cv:
            stale = [p for p, o in self._held.items() if o is owner]
            for path in stale:
                del self._held[path]
            if stale:
                self._cv.notify_all()
            return len(stale)

    def held_snapshot(self) -> dict[tuple, LockOwner]:
        with self._cv:
            return dict(self._held)

    def reap_dead_owners(self) -> int:
        with self._cv:
            return self._reap_dead()

    def _reap_dead(self) -> int:
        dead = [p for p, o in self._held.items() if not o.alive()]
        for path in dead:
            del self._held[path]
        if dead:
            self._cv.notify_all()
        return len(dead)
