"""Canonical byte encoding shared by transactions, contract calls and events.

Layout rules:

* unsigned integers are 8-byte big-endian (``u64``)
* wei amounts are 16-byte big-endian (``u128``) since they range over 128 bits
* byte strings carry a 4-byte big-endian length prefix
* enums are a single byte
"""

from __future__ import annotations

import struct

U64_MAX = 2**64 - 1
U128_MAX = 2**128 - 1


class EncodingError(ValueError):
    pass


def u64(n: int) -> bytes:
    if not 0 <= n <= U64_MAX:
        raise EncodingError(f"u64 out of range: {n}")
    return struct.pack(">Q", n)


def u128(n: int) -> bytes:
    if not 0 <= n <= U128_MAX:
        raise EncodingError(f"u128 out of range: {n}")
    return n.to_bytes(16, "big")


def enum8(n: int) -> bytes:
    if not 0 <= n <= 255:
        raise EncodingError(f"enum out of range: {n}")
    return bytes([n])


def lp(data: bytes) -> bytes:
    """Length-prefix a byte string."""
    return struct.pack(">I", len(data)) + bytes(data)


def text(s: str) -> bytes:
    return lp(s.encode("ascii"))


class Reader:
    """Sequential decoder over a canonical byte string."""

    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise EncodingError("truncated input")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def u128(self) -> int:
        return int.from_bytes(self._take(16), "big")

    def enum8(self) -> int:
        return self._take(1)[0]

    def bytes(self) -> bytes:
        (n,) = struct.unpack(">I", self._take(4))
        return self._take(n)

    def text(self) -> str:
        try:
            return self.bytes().decode("ascii")
        except UnicodeDecodeError as exc:
            raise EncodingError("non-ascii text field") from exc

    def done(self) -> None:
        if self._pos != len(self._data):
            raise EncodingError(f"{len(self._data) - self._pos} trailing bytes")
