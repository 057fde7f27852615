"""
harness/pool.py — ordered thread pool for scan points.

run_tasks() fans items out over `threads` workers and returns results in input
order, so artifacts do not depend on the thread count. One progress line per
finished item goes to stderr:

    [3/40] f=2.750 MHz  0.41s
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any

import click


def _timed(fn: Callable[[Any], Any], item: Any) -> tuple[Any, float]:
    t0 = time.perf_counter()
    result = fn(item)
    return result, time.perf_counter() - t0


def run_tasks(
    fn: Callable[[Any], Any],
    items: Iterable[Any],
    threads: int = 1,
    label: Callable[[Any], str] | None = None,
    quiet: bool = False,
) -> list[Any]:
    items = list(items)
    total = len(items)
    label = label or str
    results: list[Any] = [None] * total

    def report(done: int, item: Any, elapsed: float) -> None:
        if not quiet:
            click.echo(f"  [{done}/{total}] {label(item)}  {elapsed:.2f}s", err=True)

    if threads <= 1 or total <= 1:
        for i, item in enumerate(items):
            results[i], elapsed = _timed(fn, item)
            report(i + 1, item, elapsed)
        return results

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(_timed, fn, item): i for i, item in enumerate(items)}
        for done, future in enumerate(as_completed(futures), start=1):
            i = futures[future]
            results[i], elapsed = future.result()
            report(done, items[i], elapsed)
    return results


def make_mapper(threads: int, prefix: str = "", fmt: str = "{}", quiet: bool = False) -> Callable:
    """A map()-compatible callable backed by run_tasks, for the skills' `mapper=` hooks."""

    def mapper(fn: Callable[[Any], Any], items: Iterable[Any]) -> list[Any]:
        return run_tasks(fn, items, threads, label=lambda x: prefix + fmt.format(x), quiet=quiet)

    return mapper
