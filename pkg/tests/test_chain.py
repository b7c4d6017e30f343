import random
from dataclasses import replace
from pathlib import Path

import pytest

from gridledger import chain as chain_mod
from gridledger import crypto
from gridledger.chain import (
    ZERO_DIGEST,
    BadSignatureError,
    Block,
    BlockDecodeError,
    Chain,
    EncodingError,
    ExportFormatError,
    LinkMismatchError,
    Record,
    RecordKind,
    RecordMetadata,
    RootMismatchError,
    TimestampRegressionError,
    block_bytes,
    block_from_bytes,
    export_chain,
    genesis,
    import_chain,
    merkle_root_of,
    record_bytes,
    trace,
    verify_chain,
)
from gridledger.merkle import EMPTY_ROOT

from testutil import build_chain, keypair, signed_record

FIXTURES = Path(__file__).parent / "fixtures"


class TestCanonicalBytes:
    def test_deterministic(self):
        record = signed_record(keypair(1), b"payload")
        assert record_bytes(record) == record_bytes(record)

    def test_data_class_changes_bytes(self):
        kp = keypair(1)
        a = signed_record(kp, b"payload", data_class="load")
        b = signed_record(kp, b"payload", data_class="telemetry")
        assert record_bytes(a) != record_bytes(b)

    def test_golden_record_fixture(self):
        record = Record(
            uploader_public_key=bytes(range(64)),
            payload_digest=crypto.digest(b"golden payload"),
            metadata=RecordMetadata(
                kind=RecordKind.GRID_DATA, data_class="telemetry", created_tick=1234
            ),
            uploader_signature=bytes([0xAB]) * 64,
        )
        expected = (FIXTURES / "record_golden.txt").read_text().strip()
        assert record_bytes(record).hex() == expected

    def test_oversized_data_class_rejected(self):
        record = signed_record(keypair(2), b"p", data_class="x" * 65)
        with pytest.raises(EncodingError):
            record_bytes(record)

    def test_empty_data_class_rejected(self):
        record = signed_record(keypair(2), b"p", data_class="")
        with pytest.raises(EncodingError):
            record_bytes(record)

    def test_block_round_trip(self):
        chain = build_chain(2)
        for block in chain.blocks:
            assert block_from_bytes(block_bytes(block)) == block

    def test_decode_rejects_truncation_and_trailing(self):
        data = block_bytes(build_chain(1).blocks[1])
        with pytest.raises(EncodingError):
            block_from_bytes(data[:-1])
        with pytest.raises(EncodingError):
            block_from_bytes(data + b"\x00")


class TestGenesis:
    def test_prev_is_zero_digest(self):
        assert genesis("net-a").header.prev_block_digest == ZERO_DIGEST

    def test_root_is_empty_sentinel(self):
        assert genesis("net-a").header.merkle_root == EMPTY_ROOT

    def test_same_config_byte_identical(self):
        assert block_bytes(genesis("net-a")) == block_bytes(genesis("net-a"))

    def test_distinct_networks_differ(self):
        assert block_bytes(genesis("net-a")) != block_bytes(genesis("net-b"))

    def test_genesis_verifies(self):
        assert verify_chain(Chain((genesis("net-a"),))) is None


class TestAppend:
    def test_valid_block_appends(self):
        chain = build_chain(3)
        assert len(chain) == 4
        assert verify_chain(chain) is None

    def test_link_mismatch(self):
        chain = build_chain(3)
        stale_prev = chain_mod.block_digest(chain.blocks[1])  # N-2, not the tip
        block = chain_mod.make_block(keypair(1000), stale_prev, 9999, ())
        with pytest.raises(LinkMismatchError):
            chain.append(block)

    def test_root_mismatch_after_record_swap(self):
        chain = build_chain(2)
        tip = chain.tip
        swapped = (tip.records[1], tip.records[0]) + tip.records[2:]
        bad = Block(header=tip.header, records=swapped)
        with pytest.raises(RootMismatchError):
            Chain(chain.blocks[:-1]).append(bad)

    def test_timestamp_regression(self):
        chain = build_chain(2)
        block = chain_mod.make_block(keypair(1000), chain.tip_digest, 5, ())
        with pytest.raises(TimestampRegressionError):
            chain.append(block)

    def test_equal_timestamp_allowed(self):
        chain = build_chain(1)
        tick = chain.tip.header.timestamp_tick
        block = chain_mod.make_block(keypair(1000), chain.tip_digest, tick, ())
        assert len(chain.append(block)) == 3

    def test_bad_header_signature(self):
        chain = build_chain(1)
        good = chain_mod.make_block(keypair(1000), chain.tip_digest, 700, ())
        forged = Block(
            header=replace(good.header, recorder_public_key=keypair(1001).public_key),
            records=good.records,
        )
        with pytest.raises(BadSignatureError):
            chain.append(forged)

    def test_bad_record_signature(self):
        chain = build_chain(1)
        record = signed_record(keypair(5), b"data", tick=700)
        record = replace(record, payload_digest=crypto.digest(b"other"))
        block = chain_mod.make_block(keypair(1000), chain.tip_digest, 700, (record,))
        with pytest.raises(BadSignatureError):
            chain.append(block)


class TestVerifyChain:
    def test_untampered_ten_block_chain(self):
        assert verify_chain(build_chain(10)) is None

    def test_record_byte_flip_detected_at_its_block(self):
        chain = build_chain(5)
        target = chain.blocks[3]
        record = target.records[0]
        bad_digest = bytearray(record.payload_digest)
        bad_digest[0] ^= 1
        mutated = replace(record, payload_digest=bytes(bad_digest))
        blocks = list(chain.blocks)
        blocks[3] = Block(header=target.header, records=(mutated,) + target.records[1:])
        violation = verify_chain(Chain(tuple(blocks)))
        assert violation is not None
        assert violation.index == 3
        assert violation.reason == "root-mismatch"

    def test_resigned_with_other_key_detected(self):
        chain = build_chain(5)
        target = chain.blocks[3]
        other = keypair(777)
        # recompute root and re-sign with a different key, keep the stated key
        resigned = chain_mod.make_block(
            other, target.header.prev_block_digest, target.header.timestamp_tick, target.records
        )
        forged = Block(
            header=replace(resigned.header, recorder_public_key=target.header.recorder_public_key),
            records=target.records,
        )
        blocks = list(chain.blocks)
        blocks[3] = forged
        violation = verify_chain(Chain(tuple(blocks)))
        assert violation is not None
        assert violation.index == 3
        assert violation.reason == "bad-signature"

    def test_tamper_propagation_bound(self):
        # any single-byte mutation of any block is reported at index <= i+1
        chain = build_chain(6, records_per_block=2)
        rng = random.Random(1234)
        for i, block in enumerate(chain.blocks):
            raw = block_bytes(block)
            for _ in range(30):
                pos = rng.randrange(len(raw))
                mutated = bytearray(raw)
                mutated[pos] ^= 1 << rng.randrange(8)
                try:
                    candidate = block_from_bytes(bytes(mutated))
                except EncodingError:
                    continue  # structurally dead at block i itself
                blocks = list(chain.blocks)
                blocks[i] = candidate
                violation = verify_chain(Chain(tuple(blocks)))
                assert violation is not None, f"block {i} byte {pos} undetected"
                assert violation.index <= i + 1


class TestTrace:
    def test_unknown_digest_empty(self):
        chain = build_chain(2)
        assert trace(chain, crypto.digest(b"never recorded")) == []

    def test_uploader_key_finds_only_its_records(self):
        alice, bob = keypair(1), keypair(2)
        recorder = keypair(1000)
        chain = Chain((genesis("t"),))
        records = (
            signed_record(alice, b"a1", tick=600),
            signed_record(bob, b"b1", tick=600),
            signed_record(alice, b"a2", tick=600),
        )
        chain = chain.append(chain_mod.make_block(recorder, chain.tip_digest, 600, records))
        rows = trace(chain, alice.public_key)
        assert [r.payload_digest for _, _, r in rows] == [
            crypto.digest(b"a1"),
            crypto.digest(b"a2"),
        ]

    def test_digest_lineage_includes_share_records(self):
        alice = keypair(1)
        recorder = keypair(1000)
        shared = crypto.digest(b"the payload")
        origin = signed_record(alice, b"the payload", tick=600)
        share1 = signed_record(
            alice, b"tx-1", data_class=shared.hex(), tick=1200, kind=RecordKind.SHARE_TRANSACTION
        )
        share2 = signed_record(
            alice, b"tx-2", data_class=shared.hex(), tick=1800, kind=RecordKind.SHARE_TRANSACTION
        )
        chain = Chain((genesis("t"),))
        chain = chain.append(chain_mod.make_block(recorder, chain.tip_digest, 600, (origin,)))
        chain = chain.append(chain_mod.make_block(recorder, chain.tip_digest, 1200, (share1,)))
        chain = chain.append(chain_mod.make_block(recorder, chain.tip_digest, 1800, (share2,)))
        rows = trace(chain, shared)
        assert len(rows) == 3
        assert [(b, r) for b, r, _ in rows] == [(1, 0), (2, 0), (3, 0)]
        assert rows[0][2].metadata.kind is RecordKind.GRID_DATA

    def test_bad_query_length(self):
        with pytest.raises(ValueError):
            trace(build_chain(1), b"\x00" * 16)


class TestExportImport:
    def test_round_trip(self):
        chain = build_chain(4)
        assert import_chain(export_chain(chain)).blocks == chain.blocks

    def test_empty_export_rejected(self):
        with pytest.raises(ExportFormatError):
            import_chain("")
        with pytest.raises(ExportFormatError):
            import_chain("\n  \n")

    def test_non_hex_rejected(self):
        with pytest.raises(ExportFormatError):
            import_chain("zzzz\n")

    def test_block_decode_error_carries_index(self):
        text = export_chain(build_chain(2))
        lines = text.splitlines()
        lines[1] = lines[1][:-10]  # truncate block 1's bytes (keep hex valid)
        with pytest.raises(BlockDecodeError) as exc_info:
            import_chain("\n".join(lines))
        assert exc_info.value.index == 1
