"""Operation counters used as the hardware-independent cost proxy.

Library primitives call :func:`count`; nothing is recorded unless a caller
has installed a sink with :func:`recording`. The simulator installs one sink
per (validator, round) around each event handler.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator

OPERATIONS = ("hash", "sign", "verify", "quote_issue", "quote_verify")

_sink: ContextVar[Counter | None] = ContextVar("pote_op_sink", default=None)


def count(op: str, n: int = 1) -> None:
    sink = _sink.get()
    if sink is not None:
        sink[op] += n


@contextmanager
def recording(sink: Counter) -> Iterator[Counter]:
    token = _sink.set(sink)
    try:
        yield sink
    finally:
        _sink.reset(token)


@contextmanager
def suspended() -> Iterator[None]:
    """Run a block without charging operations to the active sink."""
    token = _sink.set(None)
    try:
        yield
    finally:
        _sink.reset(token)
