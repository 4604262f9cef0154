"""3n+1 sequence database benchmark workbench.

Runs the concurrent memoized-3n+1 workload against two interchangeable
key-value backends - an in-process hierarchical store with optimistic
transactions and hierarchical locks, and a RESP2 client/server over TCP -
and reports the longest sequence, the highest value reached, total metered
database reads and updates, and wall time.
"""

from .bench import BenchConfig, BenchReport, make_blocks, oracle, run_bench
from .collatz import SequenceStore, next_term, sequence
from .keys import Key
from .memstore import EmbeddedStore
from .store import AccessCounters, MeteredNode, StoreError, metered

__all__ = [
    "AccessCounters",
    "BenchConfig",
    "BenchReport",
    "EmbeddedStore",
    "Key",
    "MeteredNode",
    "SequenceStore",
    "StoreError",
    "make_blocks",
    "metered",
    "next_term",
    "oracle",
    "run_bench",
    "sequence",
]
