"""Symbolic key derivation and encryption.

Ciphertexts here are inert records: the payload is kept verbatim and is only
handed back when the caller presents a key whose domain-separated digest
matches the tag on the record. Nothing in this module is a cipher, which is
the point: protocol properties about *who holds which key* stay fully
testable while the code stays useless for protecting or locking real data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .encoding import EncodingError, Reader, enum8, lp

SK_PREFIX = b"sk"
PK_PREFIX = b"pk"
SYM_PREFIX = b"sym"

_SEALED_TAG = 0xA5


class CryptoError(Exception):
    pass


class KeyMismatch(CryptoError):
    pass


class BadSeedLength(CryptoError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def pk_of(sk: bytes) -> bytes:
    return digest(PK_PREFIX + sk)


def sym_tag(key: bytes) -> bytes:
    return digest(SYM_PREFIX + key)


def kdf_keypair(seed: bytes) -> tuple[bytes, bytes]:
    """Derive ``(sk, pk)`` from a 32-byte seed (a transaction hash)."""
    if len(seed) != 32:
        raise BadSeedLength(f"seed must be 32 bytes, got {len(seed)}")
    sk = digest(SK_PREFIX + seed)
    return sk, pk_of(sk)


@dataclass(frozen=True)
class AsymCiphertext:
    pk_tag: bytes
    _payload: bytes = field(repr=False)

    def encode(self) -> bytes:
        return enum8(_SEALED_TAG) + lp(self.pk_tag) + lp(self._payload)

    @classmethod
    def decode(cls, data: bytes) -> "AsymCiphertext":
        r = Reader(data)
        try:
            if r.enum8() != _SEALED_TAG:
                raise CryptoError("not a sealed record")
            tag = r.bytes()
            payload = r.bytes()
            r.done()
        except EncodingError as exc:
            raise CryptoError(f"malformed sealed record: {exc}") from exc
        return cls(tag, payload)


@dataclass(frozen=True)
class SymCiphertext:
    key_tag: bytes
    _payload: bytes = field(repr=False)


def seal(pk: bytes, payload: bytes) -> AsymCiphertext:
    return AsymCiphertext(bytes(pk), bytes(payload))


def open(sk: bytes, ct: AsymCiphertext) -> bytes:  # noqa: A001 - mirrors seal/open pairing
    if pk_of(sk) != ct.pk_tag:
        raise KeyMismatch("secret key does not match sealed record")
    return ct._payload


def lock(key: bytes, asset: bytes) -> SymCiphertext:
    return SymCiphertext(sym_tag(key), bytes(asset))


def unlock(key: bytes, ct: SymCiphertext) -> bytes:
    if sym_tag(key) != ct.key_tag:
        raise KeyMismatch("symmetric key does not match locked record")
    return ct._payload
