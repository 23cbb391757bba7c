"""Canonical binary encoding and hashing.

Every protocol object is written field by field in declaration order.
Integers are fixed-width little-endian, variable-length byte fields carry a
32-bit little-endian length prefix, nested objects are written inline and
there is no padding. Decoding is strict: truncation, oversized length
prefixes and trailing bytes all raise :class:`MalformedEncoding`.

Protocol types implement ``write_to(writer)`` and a ``read_from(reader)``
classmethod; :func:`encode` and :func:`decode` are the only entry points the
rest of the package uses.
"""

from __future__ import annotations

import hashlib
import struct
from enum import IntEnum
from typing import Protocol, TypeVar

from pote import counters

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

MAX_QUOTE_BYTES = 8192
MAX_ENCLAVE_SIGNATURE_BYTES = 96

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class CodecError(ValueError):
    pass


class VariableFieldTooLong(CodecError):
    """A length-limited field exceeds its maximum at encode time."""


class MalformedEncoding(CodecError):
    """Bytes do not decode to the requested type."""


class HashAlgorithm(IntEnum):
    """One-byte hash identifier recorded in chain configuration."""

    SHA256 = 1
    SHA3_256 = 2
    BLAKE2B_256 = 3


_DEFAULT_ALGORITHM = HashAlgorithm.SHA256


def _hasher(alg: HashAlgorithm):
    if alg is HashAlgorithm.SHA256:
        return hashlib.sha256()
    if alg is HashAlgorithm.SHA3_256:
        return hashlib.sha3_256()
    if alg is HashAlgorithm.BLAKE2B_256:
        return hashlib.blake2b(digest_size=32)
    raise ValueError(f"unknown hash algorithm {alg!r}")


def set_hash_algorithm(alg: HashAlgorithm | int) -> HashAlgorithm:
    """Switch the process-wide digest algorithm; returns the previous one."""
    global _DEFAULT_ALGORITHM
    previous = _DEFAULT_ALGORITHM
    _DEFAULT_ALGORITHM = HashAlgorithm(alg)
    return previous


def hash_algorithm() -> HashAlgorithm:
    return _DEFAULT_ALGORITHM


def hash(data: bytes, alg: HashAlgorithm | None = None) -> bytes:  # noqa: A001
    """256-bit digest of ``data`` (SHA-256 unless configured otherwise)."""
    counters.count("hash")
    h = _hasher(_DEFAULT_ALGORITHM if alg is None else HashAlgorithm(alg))
    h.update(data)
    return h.digest()


def check_digest(value: bytes, name: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be exactly {DIGEST_SIZE} bytes")
    return bytes(value)


class Writer:
    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> None:
        self._parts.append(_U8.pack(value))

    def u32(self, value: int) -> None:
        self._parts.append(_U32.pack(value))

    def u64(self, value: int) -> None:
        self._parts.append(_U64.pack(value))

    def fixed(self, value: bytes, size: int) -> None:
        if len(value) != size:
            raise CodecError(f"fixed field expects {size} bytes, got {len(value)}")
        self._parts.append(bytes(value))

    def var(self, value: bytes, limit: int | None = None) -> None:
        if limit is not None and len(value) > limit:
            raise VariableFieldTooLong(f"field of {len(value)} bytes exceeds limit {limit}")
        if len(value) > 0xFFFFFFFF:
            raise VariableFieldTooLong("field exceeds 32-bit length prefix")
        self._parts.append(_U32.pack(len(value)))
        self._parts.append(bytes(value))

    def raw(self, value: bytes) -> None:
        self._parts.append(bytes(value))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes) -> None:
        self._buf = memoryview(bytes(data))
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos

    def _take(self, n: int) -> bytes:
        if n > self.remaining:
            raise MalformedEncoding(f"truncated: need {n} bytes, {self.remaining} left")
        out = self._buf[self._pos:self._pos + n].tobytes()
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def fixed(self, size: int) -> bytes:
        return self._take(size)

    def var(self, limit: int | None = None) -> bytes:
        n = self.u32()
        if limit is not None and n > limit:
            raise MalformedEncoding(f"declared length {n} exceeds limit {limit}")
        if n > self.remaining:
            raise MalformedEncoding(f"declared length {n} overruns buffer ({self.remaining} left)")
        return self._take(n)

    def finish(self) -> None:
        if self.remaining:
            raise MalformedEncoding(f"{self.remaining} trailing bytes")


class Encodable(Protocol):
    def write_to(self, w: Writer) -> None: ...


T = TypeVar("T")


def encode(obj: Encodable) -> bytes:
    w = Writer()
    obj.write_to(w)
    return w.getvalue()


def decode(data: bytes, cls: type[T]) -> T:
    """Inverse of :func:`encode` for ``cls``; rejects trailing bytes."""
    r = Reader(data)
    try:
        obj = cls.read_from(r)  # type: ignore[attr-defined]
    except MalformedEncoding:
        raise
    except (ValueError, struct.error) as exc:
        raise MalformedEncoding(str(exc)) from exc
    r.finish()
    return obj


def encode_u64(value: int) -> bytes:
    return _U64.pack(value)


def encode_u32(value: int) -> bytes:
    return _U32.pack(value)


def encode_bytes(value: bytes, limit: int | None = None) -> bytes:
    w = Writer()
    w.var(value, limit)
    return w.getvalue()
