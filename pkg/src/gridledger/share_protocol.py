"""Peer-to-peer data sharing with on-chain transaction evidence.

The sender proves ownership against the chain (the original grid-data record
must carry the sender's key), pulls its own at-rest ciphertext, re-seals the
plaintext to the receiver, and signs the digest. The receiver decrypts,
recomputes the digest, and checks the signature, confirming both integrity
and origin. A successful delivery is then evidenced by a share-transaction
record pushed through the ordinary recording pathway; its metadata carries
the shared digest's hex so lineage queries work from chain data alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import chain as chain_mod
from . import crypto
from .chain import ByteReader, Chain, RecordKind, RecordMetadata, encode_u64
from .crypto import Envelope, Keypair
from .datastore import DataStore


class ShareError(Enum):
    DIGEST_NOT_ON_CHAIN = "digest-not-on-chain"
    NOT_OWNER = "not-owner"
    DATASTORE_MISS = "datastore-miss"
    DECRYPTION_FAILURE = "decryption-failure"
    DIGEST_MISMATCH = "digest-mismatch"
    SIGNATURE_INVALID = "signature-invalid"


class ShareRejected(Exception):
    def __init__(self, reason: ShareError):
        super().__init__(reason.value)
        self.reason = reason


@dataclass(frozen=True)
class ShareEnvelope:
    sender_public_key: bytes
    receiver_public_key: bytes
    claimed_digest: bytes
    signed_digest: bytes
    payload_envelope: Envelope

    def to_bytes(self) -> bytes:
        return b"".join(
            (
                self.sender_public_key,
                self.receiver_public_key,
                self.claimed_digest,
                self.signed_digest,
                chain_mod.encode_var_bytes(self.payload_envelope.to_bytes()),
            )
        )


@dataclass(frozen=True)
class ShareTransaction:
    """On-chain evidence of one transfer."""

    sender_public_key: bytes
    receiver_public_key: bytes
    payload_digest: bytes
    tick: int


def transaction_bytes(tx: ShareTransaction) -> bytes:
    return b"".join(
        (
            tx.sender_public_key,
            tx.receiver_public_key,
            tx.payload_digest,
            encode_u64(tx.tick),
        )
    )


def transaction_from_bytes(data: bytes) -> ShareTransaction:
    reader = ByteReader(data)
    sender = reader.take(crypto.PUBLIC_KEY_LEN)
    receiver = reader.take(crypto.PUBLIC_KEY_LEN)
    payload_digest = reader.take(crypto.DIGEST_LEN)
    tick = reader.u64()
    reader.expect_end()
    return ShareTransaction(
        sender_public_key=sender,
        receiver_public_key=receiver,
        payload_digest=payload_digest,
        tick=tick,
    )


def _owner_of(chain: Chain, payload_digest: bytes) -> bytes | None:
    for _, _, record in chain_mod.trace(chain, payload_digest):
        if record.metadata.kind is RecordKind.GRID_DATA and record.payload_digest == payload_digest:
            return record.uploader_public_key
    return None


def initiate_share(
    sender: Keypair,
    receiver_public_key: bytes,
    payload_digest: bytes,
    chain: Chain,
    store: DataStore,
    rng=None,
) -> ShareEnvelope:
    """Ownership-checked share: only the original uploader of the digest may
    share it, and the plaintext comes from the sender's own at-rest copy."""
    owner = _owner_of(chain, payload_digest)
    if owner is None:
        raise ShareRejected(ShareError.DIGEST_NOT_ON_CHAIN)
    if owner != sender.public_key:
        raise ShareRejected(ShareError.NOT_OWNER)
    stored = store.get(payload_digest)
    if stored is None:
        raise ShareRejected(ShareError.DATASTORE_MISS)
    plaintext = crypto.decrypt(sender.private_key, stored.ciphertext)
    return ShareEnvelope(
        sender_public_key=sender.public_key,
        receiver_public_key=receiver_public_key,
        claimed_digest=payload_digest,
        signed_digest=crypto.sign(sender.private_key, payload_digest),
        payload_envelope=crypto.encrypt_for(receiver_public_key, plaintext, rng),
    )


def receive_share(receiver: Keypair, envelope: ShareEnvelope) -> bytes:
    """Decrypt, verify the sender's signature over the digest, and compare
    digests. Success returns the plaintext with the sender's identity
    confirmed; each failure mode raises a distinct reason."""
    try:
        plaintext = crypto.decrypt(receiver.private_key, envelope.payload_envelope)
    except (crypto.DecryptionError, crypto.MalformedEnvelopeError):
        raise ShareRejected(ShareError.DECRYPTION_FAILURE) from None
    if not crypto.verify(envelope.sender_public_key, envelope.claimed_digest, envelope.signed_digest):
        raise ShareRejected(ShareError.SIGNATURE_INVALID)
    if crypto.digest(plaintext) != envelope.claimed_digest:
        raise ShareRejected(ShareError.DIGEST_MISMATCH)
    return plaintext


def record_share(tx: ShareTransaction) -> tuple[bytes, RecordMetadata]:
    """Canonical upload inputs for evidencing a delivered share through the
    standard recording pathway. The record's data_class is the shared
    digest's hex, which is what chain.trace matches lineage on."""
    return (
        transaction_bytes(tx),
        RecordMetadata(
            kind=RecordKind.SHARE_TRANSACTION,
            data_class=tx.payload_digest.hex(),
            created_tick=tx.tick,
        ),
    )
