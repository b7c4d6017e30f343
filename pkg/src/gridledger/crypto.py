"""Asymmetric crypto primitives used throughout the ledger.

One pinned suite, chosen behind this module boundary: Ed25519 signatures
(deterministic, so replayed simulations produce byte-identical chains),
X25519 + HKDF-SHA256 + AES-256-GCM for the hybrid envelope, and SHA-256
digests. A node keypair bundles one signing key and one sealing key, both
derived from a single 32-byte seed.

Every operation that needs entropy (`generate_keypair` aside, which is
seed-driven by contract) accepts an optional ``rng`` with a ``randbytes``
method; the simulator passes its seeded stream, callers outside a
simulation get ``os.urandom``.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SEED_LEN = 32
DIGEST_LEN = 32
PUBLIC_KEY_LEN = 64   # Ed25519 verify key (32) || X25519 seal key (32)
PRIVATE_KEY_LEN = 64  # signing seed (32) || sealing seed (32)
SIGNATURE_LEN = 64
NONCE_LEN = 12
SESSION_KEY_LEN = 32
ENCRYPTED_KEY_LEN = 32 + SESSION_KEY_LEN + 16  # ephemeral pub || wrapped key+tag

_KEY_DERIVE_INFO = b"gridledger/node-identity"
_ENVELOPE_INFO = b"gridledger/envelope-wrap"
_WRAP_NONCE = b"\x00" * NONCE_LEN  # key-encryption key is single-use per envelope

_U32 = struct.Struct(">I")


class CryptoError(Exception):
    """Base for failures in this module."""


class DecryptionError(CryptoError):
    """Envelope could not be opened with the given private key."""


class MalformedEnvelopeError(CryptoError):
    """Envelope bytes or fields do not have the expected shape."""


@dataclass(frozen=True)
class Keypair:
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class Envelope:
    """Hybrid ciphertext: a session key sealed to the recipient plus the
    AES-GCM payload ciphertext."""

    encrypted_key: bytes
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return b"".join(
            _U32.pack(len(part)) + part
            for part in (self.encrypted_key, self.nonce, self.ciphertext)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        parts = []
        pos = 0
        for _ in range(3):
            if pos + 4 > len(data):
                raise MalformedEnvelopeError("truncated envelope")
            (n,) = _U32.unpack_from(data, pos)
            pos += 4
            if pos + n > len(data):
                raise MalformedEnvelopeError("truncated envelope")
            parts.append(data[pos : pos + n])
            pos += n
        if pos != len(data):
            raise MalformedEnvelopeError("trailing bytes after envelope")
        return cls(encrypted_key=parts[0], nonce=parts[1], ciphertext=parts[2])


def _entropy(rng, n: int) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)


def digest(data: bytes) -> bytes:
    """SHA-256 of ``data``; 32 bytes, pure."""
    return hashlib.sha256(data).digest()


def generate_keypair(seed: bytes) -> Keypair:
    """Derive a signing+sealing keypair from a 32-byte seed.

    Deterministic: the same seed always yields the same keypair, which is
    what makes simulation replays byte-identical.
    """
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise ValueError(f"seed must be exactly {SEED_LEN} bytes")
    expanded = HKDF(
        algorithm=hashes.SHA256(),
        length=64,
        salt=None,
        info=_KEY_DERIVE_INFO,
    ).derive(bytes(seed))
    sign_seed, seal_seed = expanded[:32], expanded[32:]
    verify_key = (
        Ed25519PrivateKey.from_private_bytes(sign_seed).public_key().public_bytes_raw()
    )
    seal_key = (
        X25519PrivateKey.from_private_bytes(seal_seed).public_key().public_bytes_raw()
    )
    return Keypair(
        public_key=verify_key + seal_key,
        private_key=sign_seed + seal_seed,
    )


def _public_key_of(private_key: bytes) -> bytes:
    verify_key = (
        Ed25519PrivateKey.from_private_bytes(private_key[:32]).public_key().public_bytes_raw()
    )
    seal_key = (
        X25519PrivateKey.from_private_bytes(private_key[32:]).public_key().public_bytes_raw()
    )
    return verify_key + seal_key


def sign(private_key: bytes, message: bytes) -> bytes:
    """Ed25519 signature bound to the signer's full composite public key, so
    perturbing any byte of a public key breaks verification, not just the
    signing half."""
    if len(private_key) != PRIVATE_KEY_LEN:
        raise ValueError("malformed private key")
    signer = Ed25519PrivateKey.from_private_bytes(private_key[:32])
    return signer.sign(digest(_public_key_of(private_key)) + message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` was produced by the matching private key over
    exactly ``message``. Malformed inputs verify false, never raise."""
    if len(public_key) != PUBLIC_KEY_LEN or len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(
            signature, digest(public_key) + message
        )
    except (InvalidSignature, ValueError):
        return False
    return True


def _wrap_kek(shared: bytes, ephemeral_pub: bytes, recipient_seal: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_ENVELOPE_INFO + ephemeral_pub + recipient_seal,
    ).derive(shared)


def encrypt_for(public_key: bytes, plaintext: bytes, rng=None) -> Envelope:
    """Seal ``plaintext`` to the holder of ``public_key``'s private half.

    A fresh session key encrypts the payload; the session key is wrapped
    under an ephemeral X25519 agreement with the recipient's seal key.
    """
    if len(public_key) != PUBLIC_KEY_LEN:
        raise ValueError("malformed public key")
    recipient_seal = public_key[32:]
    session_key = _entropy(rng, SESSION_KEY_LEN)
    ephemeral = X25519PrivateKey.from_private_bytes(_entropy(rng, 32))
    ephemeral_pub = ephemeral.public_key().public_bytes_raw()
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(recipient_seal))
    kek = _wrap_kek(shared, ephemeral_pub, recipient_seal)
    wrapped = AESGCM(kek).encrypt(_WRAP_NONCE, session_key, None)
    nonce = _entropy(rng, NONCE_LEN)
    ciphertext = AESGCM(session_key).encrypt(nonce, plaintext, None)
    return Envelope(
        encrypted_key=ephemeral_pub + wrapped,
        nonce=nonce,
        ciphertext=ciphertext,
    )


def decrypt(private_key: bytes, envelope: Envelope) -> bytes:
    """Open an envelope. Raises DecryptionError for a non-matching key,
    MalformedEnvelopeError for structurally broken envelopes."""
    if len(private_key) != PRIVATE_KEY_LEN:
        raise ValueError("malformed private key")
    if len(envelope.encrypted_key) != ENCRYPTED_KEY_LEN:
        raise MalformedEnvelopeError("encrypted_key has wrong length")
    if len(envelope.nonce) != NONCE_LEN:
        raise MalformedEnvelopeError("nonce has wrong length")
    if len(envelope.ciphertext) < 16:
        raise MalformedEnvelopeError("ciphertext shorter than its tag")
    ephemeral_pub = envelope.encrypted_key[:32]
    wrapped = envelope.encrypted_key[32:]
    seal_priv = X25519PrivateKey.from_private_bytes(private_key[32:])
    recipient_seal = seal_priv.public_key().public_bytes_raw()
    shared = seal_priv.exchange(X25519PublicKey.from_public_bytes(ephemeral_pub))
    kek = _wrap_kek(shared, ephemeral_pub, recipient_seal)
    try:
        session_key = AESGCM(kek).decrypt(_WRAP_NONCE, wrapped, None)
    except InvalidTag:
        raise DecryptionError("session key does not unwrap under this key") from None
    try:
        return AESGCM(session_key).decrypt(envelope.nonce, envelope.ciphertext, None)
    except InvalidTag:
        raise DecryptionError("payload ciphertext failed authentication") from None
