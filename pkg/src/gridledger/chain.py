"""Block and chain data model, canonical byte encoding, verification, and
provenance queries.

The canonical encoding is the injective, length-prefixed layout every digest
and signature in the system is computed over. Fixed-width fields are written
raw; variable fields get a big-endian u32 length prefix. Timestamps are
simulation ticks, never wall-clock.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

from . import crypto
from .crypto import Keypair, digest
from .merkle import build_tree

ZERO_DIGEST = b"\x00" * crypto.DIGEST_LEN
MAX_DATA_CLASS_LEN = 64

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class ChainError(Exception):
    """Base for chain-level failures."""


class EncodingError(ChainError):
    """A field violates its declared size or value bounds."""


class LinkMismatchError(ChainError):
    pass


class RootMismatchError(ChainError):
    pass


class BadSignatureError(ChainError):
    pass


class TimestampRegressionError(ChainError):
    pass


class ExportFormatError(ChainError):
    """A chain export file is not hex lines at all."""


class BlockDecodeError(ChainError):
    """One exported block's bytes do not decode to a structurally valid
    block; carries the offending block index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"block {index}: {message}")
        self.index = index


class RecordKind(Enum):
    GRID_DATA = 0
    SHARE_TRANSACTION = 1

    @property
    def label(self) -> str:
        return "grid-data" if self is RecordKind.GRID_DATA else "share-transaction"


@dataclass(frozen=True)
class RecordMetadata:
    kind: RecordKind
    data_class: str
    created_tick: int


@dataclass(frozen=True)
class Record:
    """One ledger entry: uploader key, payload digest, metadata, and the
    uploader's signature over the payload digest."""

    uploader_public_key: bytes
    payload_digest: bytes
    metadata: RecordMetadata
    uploader_signature: bytes


@dataclass(frozen=True)
class BlockHeader:
    prev_block_digest: bytes
    timestamp_tick: int
    merkle_root: bytes
    recorder_public_key: bytes
    recorder_signature: bytes


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    records: tuple[Record, ...]


@dataclass(frozen=True)
class Violation:
    """Earliest point at which a chain breaks an invariant."""

    index: int
    reason: str


# --- canonical encoding -------------------------------------------------

def encode_u64(value: int) -> bytes:
    if not 0 <= value < 2**64:
        raise EncodingError(f"value {value} outside u64 range")
    return _U64.pack(value)


def encode_var_bytes(data: bytes) -> bytes:
    return _U32.pack(len(data)) + data


class ByteReader:
    """Strict sequential reader for the canonical encoding."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise EncodingError("truncated input")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def var_bytes(self) -> bytes:
        return self.take(self.u32())

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise EncodingError("trailing bytes")


def _check_fixed(name: str, data: bytes, n: int) -> bytes:
    if len(data) != n:
        raise EncodingError(f"{name} must be {n} bytes, got {len(data)}")
    return data


def _data_class_bytes(data_class: str) -> bytes:
    encoded = data_class.encode("utf-8")
    if not encoded:
        raise EncodingError("data_class must be non-empty")
    if len(encoded) > MAX_DATA_CLASS_LEN:
        raise EncodingError(f"data_class exceeds {MAX_DATA_CLASS_LEN} bytes")
    return encoded


def record_bytes(record: Record) -> bytes:
    md = record.metadata
    if md.created_tick < 0:
        raise EncodingError("created_tick must be non-negative")
    return b"".join(
        (
            _check_fixed("uploader key", record.uploader_public_key, crypto.PUBLIC_KEY_LEN),
            _check_fixed("payload digest", record.payload_digest, crypto.DIGEST_LEN),
            bytes([md.kind.value]),
            encode_var_bytes(_data_class_bytes(md.data_class)),
            encode_u64(md.created_tick),
            _check_fixed("uploader signature", record.uploader_signature, crypto.SIGNATURE_LEN),
        )
    )


def record_from_reader(reader: ByteReader) -> Record:
    uploader = reader.take(crypto.PUBLIC_KEY_LEN)
    payload_digest = reader.take(crypto.DIGEST_LEN)
    kind_value = reader.u8()
    try:
        kind = RecordKind(kind_value)
    except ValueError:
        raise EncodingError(f"unknown record kind {kind_value}") from None
    raw_class = reader.var_bytes()
    if not raw_class or len(raw_class) > MAX_DATA_CLASS_LEN:
        raise EncodingError("data_class length out of bounds")
    try:
        data_class = raw_class.decode("utf-8")
    except UnicodeDecodeError:
        raise EncodingError("data_class is not valid UTF-8") from None
    created_tick = reader.u64()
    signature = reader.take(crypto.SIGNATURE_LEN)
    return Record(
        uploader_public_key=uploader,
        payload_digest=payload_digest,
        metadata=RecordMetadata(kind=kind, data_class=data_class, created_tick=created_tick),
        uploader_signature=signature,
    )


def record_digest(record: Record) -> bytes:
    return digest(record_bytes(record))


def header_signing_bytes(
    prev_block_digest: bytes, timestamp_tick: int, merkle_root: bytes, recorder_public_key: bytes
) -> bytes:
    return b"".join(
        (
            _check_fixed("prev digest", prev_block_digest, crypto.DIGEST_LEN),
            encode_u64(timestamp_tick),
            _check_fixed("merkle root", merkle_root, crypto.DIGEST_LEN),
            _check_fixed("recorder key", recorder_public_key, crypto.PUBLIC_KEY_LEN),
        )
    )


def header_bytes(header: BlockHeader) -> bytes:
    return header_signing_bytes(
        header.prev_block_digest,
        header.timestamp_tick,
        header.merkle_root,
        header.recorder_public_key,
    ) + _check_fixed("recorder signature", header.recorder_signature, crypto.SIGNATURE_LEN)


def block_bytes(block: Block) -> bytes:
    parts = [header_bytes(block.header), _U32.pack(len(block.records))]
    parts.extend(record_bytes(r) for r in block.records)
    return b"".join(parts)


def block_from_bytes(data: bytes) -> Block:
    reader = ByteReader(data)
    prev = reader.take(crypto.DIGEST_LEN)
    tick = reader.u64()
    root = reader.take(crypto.DIGEST_LEN)
    recorder = reader.take(crypto.PUBLIC_KEY_LEN)
    signature = reader.take(crypto.SIGNATURE_LEN)
    count = reader.u32()
    records = tuple(record_from_reader(reader) for _ in range(count))
    reader.expect_end()
    return Block(
        header=BlockHeader(
            prev_block_digest=prev,
            timestamp_tick=tick,
            merkle_root=root,
            recorder_public_key=recorder,
            recorder_signature=signature,
        ),
        records=records,
    )


def block_digest(block: Block) -> bytes:
    """Digest of the full header (signature included); records are covered
    transitively through the Merkle root."""
    return digest(header_bytes(block.header))


def merkle_root_of(records: tuple[Record, ...]) -> bytes:
    return build_tree([record_digest(r) for r in records]).root


def make_block(
    recorder: Keypair,
    prev_block_digest: bytes,
    timestamp_tick: int,
    records: tuple[Record, ...],
) -> Block:
    root = merkle_root_of(records)
    signing = header_signing_bytes(prev_block_digest, timestamp_tick, root, recorder.public_key)
    return Block(
        header=BlockHeader(
            prev_block_digest=prev_block_digest,
            timestamp_tick=timestamp_tick,
            merkle_root=root,
            recorder_public_key=recorder.public_key,
            recorder_signature=crypto.sign(recorder.private_key, signing),
        ),
        records=records,
    )


# --- chain --------------------------------------------------------------

def genesis(network_id: str = "grid") -> Block:
    """Deterministic bootstrap block for a named network: zero prev digest,
    empty record list, header signed by a key derived from the network id."""
    bootstrap = crypto.generate_keypair(digest(b"gridledger/genesis/" + network_id.encode()))
    return make_block(bootstrap, ZERO_DIGEST, 0, ())


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_digest(self) -> bytes:
        return block_digest(self.tip)

    def append(self, block: Block) -> "Chain":
        validate_block(block, self.tip)
        return Chain(self.blocks + (block,))


def validate_block(block: Block, prev_block: Block | None) -> None:
    """Check one block against its predecessor. Raises a distinct error per
    violated invariant; genesis passes ``prev_block=None``."""
    expected_prev = ZERO_DIGEST if prev_block is None else block_digest(prev_block)
    if block.header.prev_block_digest != expected_prev:
        raise LinkMismatchError("prev_block_digest does not match prior block")
    if prev_block is not None and block.header.timestamp_tick < prev_block.header.timestamp_tick:
        raise TimestampRegressionError("timestamp_tick decreased")
    if block.header.merkle_root != merkle_root_of(block.records):
        raise RootMismatchError("merkle_root does not match records")
    signing = header_signing_bytes(
        block.header.prev_block_digest,
        block.header.timestamp_tick,
        block.header.merkle_root,
        block.header.recorder_public_key,
    )
    if not crypto.verify(block.header.recorder_public_key, signing, block.header.recorder_signature):
        raise BadSignatureError("recorder signature invalid")
    for i, record in enumerate(block.records):
        if not crypto.verify(record.uploader_public_key, record.payload_digest, record.uploader_signature):
            raise BadSignatureError(f"record {i} uploader signature invalid")


_REASONS = {
    LinkMismatchError: "link-mismatch",
    TimestampRegressionError: "timestamp-regression",
    RootMismatchError: "root-mismatch",
    BadSignatureError: "bad-signature",
    EncodingError: "encoding-error",
}


def verify_chain(chain: Chain) -> Violation | None:
    """Full-chain audit: returns None when every link, root, and signature
    holds, else the earliest violation."""
    prev: Block | None = None
    for i, block in enumerate(chain.blocks):
        try:
            validate_block(block, prev)
        except ChainError as exc:
            return Violation(index=i, reason=_REASONS.get(type(exc), "invalid"))
        prev = block
    return None


def trace(chain: Chain, query: bytes) -> list[tuple[int, int, Record]]:
    """All records matching an uploader public key (64 bytes) or a payload
    digest (32 bytes), in chain order.

    A digest query also matches share-transaction records referencing it:
    those carry the shared digest's hex in ``metadata.data_class``.
    """
    if len(query) == crypto.PUBLIC_KEY_LEN:
        def matches(record: Record) -> bool:
            return record.uploader_public_key == query
    elif len(query) == crypto.DIGEST_LEN:
        ref_hex = query.hex()

        def matches(record: Record) -> bool:
            if record.payload_digest == query:
                return True
            return (
                record.metadata.kind is RecordKind.SHARE_TRANSACTION
                and record.metadata.data_class == ref_hex
            )
    else:
        raise ValueError("query must be a 64-byte public key or 32-byte digest")
    out = []
    for bi, block in enumerate(chain.blocks):
        for ri, record in enumerate(block.records):
            if matches(record):
                out.append((bi, ri, record))
    return out


def export_chain(chain: Chain) -> str:
    """One hex-encoded canonical block per line."""
    return "".join(block_bytes(b).hex() + "\n" for b in chain.blocks)


def import_chain(text: str) -> Chain:
    """Parse an export. Hex-level garbage raises ExportFormatError; bytes
    that fail block decoding raise BlockDecodeError with the block index."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ExportFormatError("empty chain export")
    blocks = []
    for i, line in enumerate(lines):
        try:
            raw = bytes.fromhex(line)
        except ValueError:
            raise ExportFormatError(f"line {i + 1} is not hex") from None
        try:
            blocks.append(block_from_bytes(raw))
        except EncodingError as exc:
            raise BlockDecodeError(i, str(exc)) from None
    return Chain(tuple(blocks))
