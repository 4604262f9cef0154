"""The 3n+1 step function and the memoized sequence walk.

The walk runs against an abstract store view (three node handles plus a
transaction facility), so the same code drives both the in-process and the
wire backend. Its exact shape — probe the memo table on every loop entry,
re-read the junction entry after the loop, read record nodes with a
default of 0, compare strictly greater — is deliberately preserved, since
the benchmark's read/update counts are defined by that shape.
"""

from __future__ import annotations

from dataclasses import dataclass

U64_MAX = (1 << 64) - 1
_ODD_LIMIT = (U64_MAX - 1) // 3  # largest n whose 3n+1 still fits in 64 bits


class SequenceOverflow(OverflowError):
    """3n+1 exceeded 64 bits; carries the offending value."""

    def __init__(self, n: int):
        super().__init__(f"3n+1 overflows 64 bits at n={n}")
        self.n = n


def next_term(n: int) -> int:
    """One 3n+1 step: 3n+1 for odd n, n/2 for even n."""
    if n < 1:
        raise ValueError(f"sequence values start at 1, got {n}")
    if n & 1:
        if n > _ODD_LIMIT:
            raise SequenceOverflow(n)
        return 3 * n + 1
    return n >> 1


@dataclass
class SequenceStore:
    """The store view a sequence walk needs.

    step is the memo hash (one subscript per sequence value), longest and
    highest are the shared record nodes, and transaction runs a restartable
    body atomically against the backend. For benchmark runs all three nodes
    are metered; the walk itself holds no shared state.
    """

    step: object
    longest: object
    highest: object
    transaction: object


def sequence(start: int, db: SequenceStore) -> None:
    """Walk one 3n+1 sequence from `start`, memoizing results into the store.

    Stops at 1 or at the first value already present in the memo table. If
    nothing new was computed, returns without touching the store further;
    otherwise adds the memoized remainder, updates the longest/highest
    records inside one transaction, and writes the remaining step count for
    every value logged on the walk.
    """
    n = start
    steps = 0
    highest = 0
    currpath = []
    node = db.step.child(n)
    while node.get() is None and n > 1:
        currpath.append(n)  # log n as the current number in the sequence
        n = next_term(n)
        if n > highest:
            highest = n
        steps += 1
        node = db.step.child(n)
    if steps == 0:
        return  # the answer for `start` is already in the store
    if n > 1:
        steps += int(node.get())  # add the memoized remainder of the path
    update_records(db, steps, highest)
    for i, value in enumerate(currpath):
        db.step.child(value).set(steps - i)


def update_records(db: SequenceStore, steps: int, highest: int) -> None:
    """Raise the shared longest/highest records atomically.

    Absent records read as 0; comparisons are strictly greater, so ties
    write nothing. Runs inside one transaction so concurrent walks cannot
    lose a larger value to a smaller late write.
    """

    def body(_store):
        if steps > int(db.longest.get(b"0")):
            db.longest.set(steps)
        if highest > int(db.highest.get(b"0")):
            db.highest.set(highest)

    db.transaction(body)
