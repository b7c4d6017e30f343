"""The seven-step data-recording procedure.

Uploaders request permission from the duty recorder, then submit the payload
sealed to the recorder's key together with a signature over the payload
digest. The recorder decrypts, compares digests, queues a pending record,
and re-seals the ciphertext to the *uploader's* key for at-rest storage. On
each block interval the duty recorder seals the pending queue into a block,
the on-duty supervisor plus two RNG-drawn candidates re-validate it, and a
majority verdict commits or rejects it with the corresponding credit events.

The digest an uploader signed travels explicitly in the envelope, next to
its signature: that is what lets a recorder tell a forged signature apart
from a payload swapped after signing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

from . import chain as chain_mod
from . import credit as credit_mod
from . import crypto
from .chain import Block, Chain, Record, RecordMetadata, encode_var_bytes
from .credit import CreditEvent, CreditLedger, RoleAssignment
from .crypto import Envelope, Keypair
from .datastore import StoredObject

_U32 = struct.Struct(">I")

VALIDATOR_COUNT = 3
QUORUM = 2


class ProtocolError(Exception):
    """Misuse of the protocol surface (wrong validator, bad vote set...)."""


class UploadError(Enum):
    PERMISSION_DENIED = "permission-denied"
    SIGNATURE_INVALID = "signature-invalid"
    DIGEST_MISMATCH = "digest-mismatch"
    DECRYPTION_FAILURE = "decryption-failure"


class UploadRejected(Exception):
    def __init__(self, reason: UploadError):
        super().__init__(reason.value)
        self.reason = reason


@dataclass(frozen=True)
class PermissionList:
    """Genesis-configured set of public keys with upload rights."""

    keys: frozenset[bytes]

    def allows(self, public_key: bytes) -> bool:
        return public_key in self.keys


@dataclass(frozen=True)
class UploadEnvelope:
    uploader_public_key: bytes
    claimed_digest: bytes
    signed_digest: bytes
    payload_envelope: Envelope
    metadata: RecordMetadata

    def to_bytes(self) -> bytes:
        md = self.metadata
        return b"".join(
            (
                self.uploader_public_key,
                self.claimed_digest,
                self.signed_digest,
                encode_var_bytes(self.payload_envelope.to_bytes()),
                bytes([md.kind.value]),
                encode_var_bytes(md.data_class.encode("utf-8")),
                chain_mod.encode_u64(md.created_tick),
            )
        )


@dataclass(frozen=True)
class PendingUpload:
    """Accepted upload: the record queued for the next block and the
    owner-sealed object handed to the datastore."""

    record: Record
    stored: StoredObject


@dataclass(frozen=True)
class ProposedBlock:
    block: Block
    proposer_id: int
    validator_ids: tuple[int, int, int]


@dataclass(frozen=True)
class Vote:
    validator_id: int
    ok: bool
    bad_indices: tuple[int, ...]
    signature: bytes


@dataclass(frozen=True)
class CommitResult:
    committed: bool
    chain: Chain
    quarantined: tuple[tuple[int, Record], ...]
    survivors: tuple[Record, ...]
    events: tuple[CreditEvent, ...]


def request_upload(uploader_public_key: bytes, permissions: PermissionList) -> bool:
    """Granted iff the key is on the permission list."""
    return permissions.allows(uploader_public_key)


def prepare_upload(
    uploader: Keypair,
    recorder_public_key: bytes,
    payload: bytes,
    metadata: RecordMetadata,
    rng=None,
) -> UploadEnvelope:
    """Sign the payload digest and seal the payload to the duty recorder.
    The plaintext never leaves the uploader unencrypted."""
    chain_mod.record_bytes(  # eager bounds check on metadata via a throwaway record
        Record(
            uploader_public_key=uploader.public_key,
            payload_digest=crypto.digest(payload),
            metadata=metadata,
            uploader_signature=b"\x00" * crypto.SIGNATURE_LEN,
        )
    )
    payload_digest = crypto.digest(payload)
    return UploadEnvelope(
        uploader_public_key=uploader.public_key,
        claimed_digest=payload_digest,
        signed_digest=crypto.sign(uploader.private_key, payload_digest),
        payload_envelope=crypto.encrypt_for(recorder_public_key, payload, rng),
        metadata=metadata,
    )


def receive_upload(
    recorder: Keypair,
    envelope: UploadEnvelope,
    permissions: PermissionList,
    rng=None,
) -> PendingUpload:
    """Duty-recorder intake: verify permission, open the envelope, check the
    signature and the recomputed digest, and build the pending record plus
    the at-rest object re-sealed to the uploader's own key."""
    if not permissions.allows(envelope.uploader_public_key):
        raise UploadRejected(UploadError.PERMISSION_DENIED)
    try:
        payload = crypto.decrypt(recorder.private_key, envelope.payload_envelope)
    except (crypto.DecryptionError, crypto.MalformedEnvelopeError):
        raise UploadRejected(UploadError.DECRYPTION_FAILURE) from None
    if not crypto.verify(envelope.uploader_public_key, envelope.claimed_digest, envelope.signed_digest):
        raise UploadRejected(UploadError.SIGNATURE_INVALID)
    if crypto.digest(payload) != envelope.claimed_digest:
        raise UploadRejected(UploadError.DIGEST_MISMATCH)
    record = Record(
        uploader_public_key=envelope.uploader_public_key,
        payload_digest=envelope.claimed_digest,
        metadata=envelope.metadata,
        uploader_signature=envelope.signed_digest,
    )
    stored = StoredObject(
        payload_digest=envelope.claimed_digest,
        ciphertext=crypto.encrypt_for(envelope.uploader_public_key, payload, rng),
        owner_public_key=envelope.uploader_public_key,
    )
    return PendingUpload(record=record, stored=stored)


def seal_block(
    recorder: Keypair,
    proposer_id: int,
    pending: Sequence[Record],
    prev_block_digest: bytes,
    tick: int,
    supervisor_id: int,
    candidate_pool: Sequence[int],
    rng,
) -> ProposedBlock:
    """Build and sign the interval block from the pending queue (arrival
    order), and pick its validators: the on-duty supervisor plus two
    candidates drawn from the seeded RNG. An empty queue still seals an
    empty block so the timestamp chain advances."""
    if len(candidate_pool) < 2:
        raise ProtocolError("need at least two candidates for validation")
    block = chain_mod.make_block(recorder, prev_block_digest, tick, tuple(pending))
    picked = rng.sample(list(candidate_pool), 2)
    return ProposedBlock(
        block=block,
        proposer_id=proposer_id,
        validator_ids=(supervisor_id, picked[0], picked[1]),
    )


def vote_signing_bytes(block_digest: bytes, ok: bool, bad_indices: tuple[int, ...]) -> bytes:
    parts = [block_digest, b"\x01" if ok else b"\x00", _U32.pack(len(bad_indices))]
    parts.extend(_U32.pack(i) for i in bad_indices)
    return b"".join(parts)


def sign_vote(
    validator: Keypair, validator_id: int, block_digest: bytes, ok: bool, bad_indices: tuple[int, ...]
) -> Vote:
    signature = crypto.sign(validator.private_key, vote_signing_bytes(block_digest, ok, bad_indices))
    return Vote(validator_id=validator_id, ok=ok, bad_indices=bad_indices, signature=signature)


def validate_proposal(
    validator: Keypair,
    validator_id: int,
    proposal: ProposedBlock,
    expected_prev_digest: bytes,
    validity_predicate: Callable[[Record], bool],
) -> Vote:
    """Second-stage review: header link/root/signature plus, per record, the
    uploader signature and the scenario's validity predicate. The verdict is
    ok only if everything holds; otherwise the offending record indices are
    flagged (header-level failures flag none)."""
    if validator_id not in proposal.validator_ids:
        raise ProtocolError(f"node {validator_id} is not an assigned validator")
    block = proposal.block
    header_ok = (
        block.header.prev_block_digest == expected_prev_digest
        and block.header.merkle_root == chain_mod.merkle_root_of(block.records)
        and crypto.verify(
            block.header.recorder_public_key,
            chain_mod.header_signing_bytes(
                block.header.prev_block_digest,
                block.header.timestamp_tick,
                block.header.merkle_root,
                block.header.recorder_public_key,
            ),
            block.header.recorder_signature,
        )
    )
    bad = []
    for i, record in enumerate(block.records):
        signature_ok = crypto.verify(
            record.uploader_public_key, record.payload_digest, record.uploader_signature
        )
        if not signature_ok or not validity_predicate(record):
            bad.append(i)
    ok = header_ok and not bad
    return sign_vote(validator, validator_id, chain_mod.block_digest(block), ok, tuple(bad))


def commit(
    proposal: ProposedBlock,
    votes: Sequence[Vote],
    chain: Chain,
    ledger: CreditLedger,
    public_keys: Mapping[int, bytes],
    uploader_ids: Mapping[bytes, int],
) -> CommitResult:
    """Tally exactly three verified votes. Majority ok appends the block and
    rewards the recorder and every uploader; majority erroneous drops the
    quorum-flagged records to quarantine, penalizes their uploaders and the
    recorder, and keeps the surviving records pending. Validator agreement
    credits apply either way."""
    if len(votes) != VALIDATOR_COUNT:
        raise ProtocolError(f"expected {VALIDATOR_COUNT} votes, got {len(votes)}")
    block_digest = chain_mod.block_digest(proposal.block)
    seen = set()
    for vote in votes:
        if vote.validator_id not in proposal.validator_ids or vote.validator_id in seen:
            raise ProtocolError(f"vote from unassigned validator {vote.validator_id}")
        seen.add(vote.validator_id)
        if not crypto.verify(
            public_keys[vote.validator_id],
            vote_signing_bytes(block_digest, vote.ok, vote.bad_indices),
            vote.signature,
        ):
            raise ProtocolError(f"vote signature from {vote.validator_id} does not verify")

    tick = proposal.block.header.timestamp_tick
    events, majority_ok = credit_mod.apply_validator_outcomes(
        ledger, [(v.validator_id, v.ok) for v in votes], tick
    )

    if majority_ok:
        new_chain = chain.append(proposal.block)
        events.append(credit_mod.apply_block_outcome(ledger, proposal.proposer_id, False, tick))
        for record in proposal.block.records:
            uploader = uploader_ids[record.uploader_public_key]
            events.append(credit_mod.apply_record_outcome(ledger, uploader, True, tick))
        return CommitResult(
            committed=True,
            chain=new_chain,
            quarantined=(),
            survivors=(),
            events=tuple(events),
        )

    flag_counts: dict[int, int] = {}
    for vote in votes:
        if not vote.ok:
            for index in vote.bad_indices:
                flag_counts[index] = flag_counts.get(index, 0) + 1
    quarantined = tuple(
        (i, record)
        for i, record in enumerate(proposal.block.records)
        if flag_counts.get(i, 0) >= QUORUM
    )
    quarantined_set = {i for i, _ in quarantined}
    survivors = tuple(
        record for i, record in enumerate(proposal.block.records) if i not in quarantined_set
    )
    events.append(credit_mod.apply_block_outcome(ledger, proposal.proposer_id, True, tick))
    for _, record in quarantined:
        uploader = uploader_ids[record.uploader_public_key]
        events.append(credit_mod.apply_record_outcome(ledger, uploader, False, tick))
    return CommitResult(
        committed=False,
        chain=chain,
        quarantined=quarantined,
        survivors=survivors,
        events=tuple(events),
    )


def choose_validators(
    assignment: RoleAssignment, round_index: int, alive: Callable[[int], bool] | None = None
) -> tuple[int, tuple[int, ...]]:
    """On-duty supervisor (skipping crashed ones in rotation order) and the
    alive candidate pool the two extra validators are sampled from."""
    alive = alive or (lambda _nid: True)
    supervisors = assignment.supervisors
    if not supervisors:
        raise ProtocolError("no supervisors configured")
    supervisor_id = None
    for offset in range(len(supervisors)):
        candidate = supervisors[(round_index + offset) % len(supervisors)]
        if alive(candidate):
            supervisor_id = candidate
            break
    if supervisor_id is None:
        raise ProtocolError("no alive supervisor")
    pool = tuple(nid for nid in assignment.candidates if alive(nid))
    if len(pool) < 2:
        raise ProtocolError("fewer than two alive candidates")
    return supervisor_id, pool
