import random
import threading
import time

import pytest

from collatzbench.locks import LockError, LockOwner, LockTable, conflicts


def path(*segs):
    return tuple(s.encode() if isinstance(s, str) else s for s in segs)


def test_conflicts_is_prefix_relation():
    assert conflicts(path("trigger"), path("trigger"))
    assert conflicts(path("trigger"), path("trigger", "42"))
    assert conflicts(path("trigger", "42"), path("trigger"))
    assert not conflicts(path("trigger", "1"), path("trigger", "2"))
    assert not conflicts(path("trigger"), path("finished"))
    assert not conflicts(path("a", "bc"), path("a", "b"))


def test_uncontended_grab_and_release():
    table = LockTable()
    owner = LockOwner("w")
    assert table.grab(path("finished", "7"), owner, timeout=1)
    table.release(path("finished", "7"), owner)
    other = LockOwner("v")
    assert table.grab(path("finished", "7"), other, timeout=1)


def test_parent_blocks_child_until_release():
    table = LockTable()
    parent = LockOwner("parent")
    child = LockOwner("child")
    assert table.grab(path("trigger"), parent)
    # conflicting grab cannot succeed while the parent path is held
    assert table.grab(path("trigger", "42"), child, timeout=0.1) is False
    acquired = []
    t = threading.Thread(
        target=lambda: acquired.append(table.grab(path("trigger", "42"), child, timeout=5))
    )
    t.start()
    table.release(path("trigger"), parent)
    t.join(timeout=5)
    assert acquired == [True]
    table.release(path("trigger", "42"), child)


def test_parent_grab_waits_for_all_child_subscripts():
    table = LockTable()
    parent = LockOwner("parent")
    child_a = LockOwner("a")
    child_b = LockOwner("b")
    assert table.grab(path("finished", "a"), child_a)
    assert table.grab(path("finished", "b"), child_b)
    assert table.grab(path("finished"), parent, timeout=0.1) is False
    table.release(path("finished", "a"), child_a)
    assert table.grab(path("finished"), parent, timeout=0.1) is False
    table.release(path("finished", "b"), child_b)
    assert table.grab(path("finished"), parent, timeout=5) is True


def test_reentrant_grab_is_noop_and_self_conflict_is_error():
    table = LockTable()
    owner = LockOwner("w")
    assert table.grab(path("trigger"), owner)
    assert table.grab(path("trigger"), owner)  # same path again: fine
    with pytest.raises(LockError):
        table.grab(path("trigger", "1"), owner)  # would self-deadlock
    table.release(path("trigger"), owner)


def test_release_requires_exact_holder():
    table = LockTable()
    owner = LockOwner("w")
    stranger = LockOwner("s")
    with pytest.raises(LockError):
        table.release(path("never"), owner)
    table.grab(path("x"), owner)
    with pytest.raises(LockError):
        table.release(path("x"), stranger)
    table.release(path("x"), owner)


def test_waiting_parent_is_not_starved_by_later_children():
    table = LockTable()
    first_child = LockOwner("c1")
    parent = LockOwner("parent")
    late_child = LockOwner("c2")
    assert table.grab(path("finished", "1"), first_child)

    parent_result = []
    p = threading.Thread(
        target=lambda: parent_result.append(table.grab(path("finished"), parent, timeout=5))
    )
    p.start()
    deadline = time.monotonic() + 2
    while not any(e[1] == path("finished") for e in table._waiters):
        assert time.monotonic() < deadline, "parent never queued"
        time.sleep(0.005)
    # a child request issued after the parent queued must wait behind it
    assert table.grab(path("finished", "2"), late_child, timeout=0.15) is False
    table.release(path("finished", "1"), first_child)
    p.join(timeout=5)
    assert parent_result == [True]
    table.release(path("finished"), parent)
    assert table.grab(path("finished", "2"), late_child, timeout=5)


def test_release_all_on_worker_exit():
    table = LockTable()
    owner = LockOwner("w")
    table.grab(path("finished", "3"), owner)
    table.grab(path("trigger", "3"), owner)
    assert table.release_all(owner) == 2
    assert table.held_snapshot() == {}


def test_dead_owner_locks_are_reaped_quickly():
    table = LockTable()

    def crash():
        me = LockOwner("crasher", alive=threading.current_thread().is_alive)
        table.grab(path("finished", "9"), me)
        table.grab(path("stuck"), me)
        raise RuntimeError("simulated crash")

    t = threading.Thread(target=crash, daemon=True)
    t.start()
    t.join(timeout=5)
    assert not t.is_alive()
    survivor = LockOwner("survivor")
    start = time.monotonic()
    assert table.grab(path("finished"), survivor, timeout=1)
    assert table.grab(path("stuck"), survivor, timeout=1)
    assert time.monotonic() - start < 0.1


def test_dead_owner_reaped_while_waiter_is_blocked():
    table = LockTable()
    holder_alive = threading.Event()
    holder_alive.set()
    holder = LockOwner("holder", alive=holder_alive.is_set)
    table.grab(path("x"), holder)
    result = []
    waiter = LockOwner("waiter")
    t = threading.Thread(target=lambda: result.append(table.grab(path("x"), waiter, timeout=5)))
    t.start()
    time.sleep(0.1)
    holder_alive.clear()  # owner "dies" while the waiter is already blocked
    t.join(timeout=5)
    assert result == [True]


def test_hundred_contenders_on_one_path_all_acquire():
    table = LockTable()
    acquired = []
    mu = threading.Lock()

    def contend(i):
        owner = LockOwner(f"c{i}")
        assert table.grab(path("hot"), owner, timeout=60)
        table.release(path("hot"), owner)
        with mu:
            acquired.append(i)

    threads = [threading.Thread(target=contend, args=(i,)) for i in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=120)
    assert sorted(acquired) == list(range(100))
    assert table.held_snapshot() == {}


def test_lock_safety_invariant_under_stress():
    table = LockTable()
    paths = [path("a"), path("a", "1"), path("a", "2"), path("b"), path("b", "1", "x")]
    violations = []
    stop = threading.Event()

    def checker():
        while not stop.is_set():
            held = list(table.held_snapshot())
            for i, p in enumerate(held):
                for q in held[i + 1 :]:
                    if conflicts(p, q):
                        violations.append((p, q))
            time.sleep(0.001)

    def worker(seed):
        rng = random.Random(seed)
        owner = LockOwner(f"w{seed}")
        for _ in range(120):
            p = rng.choice(paths)
            try:
                got = table.grab(p, owner, timeout=0.05)
            except LockError:
                continue
            if got:
                time.sleep(rng.random() * 0.002)
                table.release(p, owner)

    check = threading.Thread(target=checker)
    check.start()
    workers = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for w in workers:
        w.start()
    for w in workers:
        w.join(timeout=120)
    stop.set()
    check.join(timeout=10)
    assert violations == []
    assert table.held_snapshot() == {}
