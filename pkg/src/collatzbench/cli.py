"""Command-line entry point: run benchmarks, serve RESP, verify results.

Exit codes are a stable scripting contract: 0 success, 1 verification
mismatch, 2 usage error, 3 environment/connection error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

from .bench import (
    BenchConfig,
    BenchError,
    BenchReport,
    DEFAULT_BLOCK_SIZE,
    DEFAULT_POLL_INTERVAL,
    EventRecorder,
    check_steps_table,
    oracle,
    run_bench,
)
from .memstore import EmbeddedStore
from .store import StoreError

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_ENV = 3

CSV_FIELDS = [
    "backend",
    "coordination",
    "workers",
    "limit",
    "block_size",
    "longest",
    "highest",
    "reads",
    "updates",
    "elapsed_s",
]

_INT_FIELDS = {"workers", "limit", "block_size", "longest", "highest", "reads", "updates"}


def default_workers() -> int:
    return 2 * (os.cpu_count() or 1)


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"address must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in address {text!r}") from None


def _default_addr() -> str:
    return os.environ.get("BENCH_ADDR", "127.0.0.1:6379")


def _add_bench_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--backend", choices=("embedded", "resp"), default="embedded")
    sub.add_argument(
        "--addr",
        type=parse_addr,
        default=None,
        help="RESP server address (default: $BENCH_ADDR or 127.0.0.1:6379)",
    )
    sub.add_argument("--workers", type=int, default=default_workers())
    sub.add_argument("--limit", type=int, default=100_000)
    sub.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    sub.add_argument(
        "--coordination",
        choices=("locks", "polling"),
        default=None,
        help="default: locks on embedded, polling on resp",
    )
    sub.add_argument("--poll-interval", type=float, default=DEFAULT_POLL_INTERVAL)
    sub.add_argument("--format", choices=("text", "json", "csv"), default="text")
    sub.add_argument("--force-flush", action="store_true")
    sub.add_argument("--event-log", metavar="PATH", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collatzbench",
        description="3n+1 sequence database benchmark over an embedded "
        "hierarchical store or a RESP2 server",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="run the benchmark and print a report")
    _add_bench_flags(bench)

    serve = commands.add_parser("serve", help="run the minimal RESP2 server until interrupted")
    serve.add_argument("--addr", type=parse_addr, default=None)

    verify = commands.add_parser(
        "verify", help="run the benchmark and check every metric against the oracle"
    )
    _add_bench_flags(verify)

    return parser


def _config_from_args(args) -> BenchConfig:
    return BenchConfig(
        backend=args.backend,
        addr=args.addr or parse_addr(_default_addr()),
        workers=args.workers,
        limit=args.limit,
        block_size=args.block_size,
        coordination=args.coordination,
        poll_interval=args.poll_interval,
        force_flush=args.force_flush,
    )


def format_report(report: BenchReport, fmt: str) -> str:
    data = report.as_dict()
    if fmt == "json":
        return json.dumps(data)
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(data)
        return out.getvalue().rstrip("\n")
    lines = [
        f"backend:      {report.backend} ({report.coordination})",
        f"workers:      {report.workers}",
        f"limit:        {report.limit} (block size {report.block_size})",
        f"longest:      {report.longest}",
        f"highest:      {report.highest}",
        f"reads:        {report.reads}",
        f"updates:      {report.updates}",
        f"elapsed:      {report.elapsed_s:.3f} s",
    ]
    return "\n".join(lines)


def report_from_json(text: str) -> BenchReport:
    return BenchReport(**json.loads(text))


def report_from_csv(text: str) -> BenchReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if len(rows) != 1:
        raise ValueError(f"expected exactly one CSV data row, got {len(rows)}")
    raw = rows[0]
    data = {}
    for name in CSV_FIELDS:
        value = raw[name]
        if name in _INT_FIELDS:
            data[name] = int(value)
        elif name == "elapsed_s":
            data[name] = float(value)
        else:
            data[name] = value
    return BenchReport(**data)


def _run_with_events(config: BenchConfig, args, store=None) -> BenchReport:
    events = EventRecorder(args.event_log) if args.event_log else None
    try:
        return run_bench(config, store=store, events=events)
    finally:
        if events is not None:
            events.close()


def cmd_bench(args) -> int:
    try:
        config = _config_from_args(args)
        config.validate()
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = _run_with_events(config, args)
    except (OSError, BenchError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    print(format_report(report, args.format))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .respserver import RespServer

    host, port = args.addr or parse_addr(_default_addr())
    try:
        server = RespServer(host=host, port=port).start()
    except OSError as exc:
        print(f"error: cannot listen on {host}:{port}: {exc}", file=sys.stderr)
        return EXIT_ENV
    print(f"listening on {host}:{port}", file=sys.stderr)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        config = _config_from_args(args)
        config.validate()
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    check_store = None
    try:
        if config.backend == "embedded":
            check_store = EmbeddedStore(config.txn_retry_limit)
            report = _run_with_events(config, args, store=check_store)
        else:
            report = _run_with_events(config, args)
            from .respclient import RespClient

            check_store = RespClient(*config.addr)
        expected_longest, expected_highest, steps_table = oracle(config.limit)
        problems = []
        if report.longest != expected_longest:
            problems.append(f"longest: reported {report.longest}, oracle says {expected_longest}")
        if report.highest != expected_highest:
            problems.append(f"highest: reported {report.highest}, oracle says {expected_highest}")
        problems.extend(check_steps_table(check_store, steps_table))
    except (OSError, BenchError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    finally:
        if config.backend == "resp" and check_store is not None:
            check_store.close()

    print(format_report(report, args.format))
    if problems:
        for problem in problems:
            print(f"MISMATCH: {problem}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"verified: metrics and step table match the oracle for 1..{config.limit}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.command == "bench":
        return cmd_bench(args)
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "verify":
        return cmd_verify(args)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
