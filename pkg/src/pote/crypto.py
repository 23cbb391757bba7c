"""Deterministic Ed25519 keys and signatures for vendors and enclaves."""

from __future__ import annotations

from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from pote import counters

PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
SEED_SIZE = 32


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes = field(repr=False)


def keygen(seed: bytes) -> KeyPair:
    """Derive a keypair from a 32-byte seed; same seed, same keypair."""
    if len(seed) != SEED_SIZE:
        raise ValueError(f"seed must be {SEED_SIZE} bytes")
    sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    pk = sk.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(public_key=pk, secret_key=bytes(seed))


_private_cache: dict[bytes, Ed25519PrivateKey] = {}
_public_cache: dict[bytes, Ed25519PublicKey | None] = {}


def _private(secret: bytes) -> Ed25519PrivateKey:
    key = _private_cache.get(secret)
    if key is None:
        key = Ed25519PrivateKey.from_private_bytes(secret)
        _private_cache[secret] = key
    return key


def _public(public_key: bytes) -> Ed25519PublicKey | None:
    if public_key in _public_cache:
        return _public_cache[public_key]
    try:
        key: Ed25519PublicKey | None = Ed25519PublicKey.from_public_bytes(public_key)
    except ValueError:
        key = None
    _public_cache[public_key] = key
    return key


def sign(secret: bytes | KeyPair, message: bytes) -> bytes:
    if isinstance(secret, KeyPair):
        secret = secret.secret_key
    if not message:
        raise ValueError("refusing to sign an empty message")
    counters.count("sign")
    return _private(bytes(secret)).sign(bytes(message))


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid; malformed input yields False."""
    counters.count("verify")
    try:
        if len(public_key) != PUBLIC_KEY_SIZE or len(signature) != SIGNATURE_SIZE:
            return False
        key = _public(bytes(public_key))
        if key is None:
            return False
        key.verify(bytes(signature), bytes(message))
        return True
    except (InvalidSignature, TypeError, ValueError):
        return False
