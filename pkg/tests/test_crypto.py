import random

import pytest

from gridledger import crypto
from gridledger.crypto import (
    DecryptionError,
    Envelope,
    MalformedEnvelopeError,
    decrypt,
    digest,
    encrypt_for,
    generate_keypair,
    sign,
    verify,
)

from testutil import keypair


class TestKeypairGeneration:
    def test_deterministic(self):
        seed = b"\x11" * 32
        assert generate_keypair(seed) == generate_keypair(seed)

    def test_distinct_seeds_distinct_keys(self):
        a = generate_keypair(b"\x01" * 32)
        b = generate_keypair(b"\x02" * 32)
        assert a.public_key != b.public_key

    def test_key_lengths(self):
        kp = keypair(0)
        assert len(kp.public_key) == crypto.PUBLIC_KEY_LEN
        assert len(kp.private_key) == crypto.PRIVATE_KEY_LEN

    def test_bad_seed_length(self):
        with pytest.raises(ValueError):
            generate_keypair(b"short")
        with pytest.raises(ValueError):
            generate_keypair(b"\x00" * 33)

    def test_thousand_seeds_all_distinct(self):
        rng = random.Random(42)
        seen = set()
        for _ in range(1000):
            kp = generate_keypair(rng.randbytes(32))
            seen.add(kp.public_key)
        assert len(seen) == 1000


class TestDigest:
    def test_deterministic(self):
        assert digest(b"abc") == digest(b"abc")

    def test_fixed_length(self):
        assert len(digest(b"")) == 32
        assert len(digest(b"x" * 10000)) == 32

    def test_empty_input_pinned(self):
        # SHA-256 of the empty string, the sentinel the merkle module reuses
        assert digest(b"").hex() == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        )

    def test_flip_one_bit_changes_digest(self):
        rng = random.Random(7)
        for _ in range(256):
            data = bytearray(rng.randbytes(rng.randrange(1, 64)))
            original = digest(bytes(data))
            pos = rng.randrange(len(data))
            data[pos] ^= 1 << rng.randrange(8)
            assert digest(bytes(data)) != original


class TestSignVerify:
    def test_round_trip(self):
        kp = keypair(1)
        sig = sign(kp.private_key, b"message")
        assert verify(kp.public_key, b"message", sig)

    def test_wrong_key_fails(self):
        sig = sign(keypair(1).private_key, b"message")
        assert not verify(keypair(2).public_key, b"message", sig)

    def test_signing_is_deterministic(self):
        kp = keypair(3)
        assert sign(kp.private_key, b"m") == sign(kp.private_key, b"m")

    def test_empty_message(self):
        kp = keypair(4)
        assert verify(kp.public_key, b"", sign(kp.private_key, b""))

    def test_malformed_inputs_verify_false(self):
        kp = keypair(5)
        sig = sign(kp.private_key, b"m")
        assert not verify(b"\x00" * 10, b"m", sig)
        assert not verify(kp.public_key, b"m", b"\x00" * 7)
        assert not verify(b"\xff" * 64, b"m", sig)

    def test_bit_flip_sweep(self):
        rng = random.Random(99)
        kp = keypair(6)
        for _ in range(100):
            message = rng.randbytes(rng.randrange(1, 128))
            sig = sign(kp.private_key, message)
            mutated = bytearray(message)
            pos = rng.randrange(len(mutated))
            mutated[pos] ^= 1 << rng.randrange(8)
            assert not verify(kp.public_key, bytes(mutated), sig)
            bad_sig = bytearray(sig)
            pos = rng.randrange(len(bad_sig))
            bad_sig[pos] ^= 1 << rng.randrange(8)
            assert not verify(kp.public_key, message, bytes(bad_sig))


class TestEnvelope:
    def test_round_trip(self):
        kp = keypair(10)
        env = encrypt_for(kp.public_key, b"grid readings")
        assert decrypt(kp.private_key, env) == b"grid readings"

    def test_wrong_key_raises(self):
        env = encrypt_for(keypair(10).public_key, b"secret")
        with pytest.raises(DecryptionError):
            decrypt(keypair(11).private_key, env)

    def test_empty_payload(self):
        kp = keypair(12)
        assert decrypt(kp.private_key, encrypt_for(kp.public_key, b"")) == b""

    def test_one_mebibyte_round_trip(self):
        kp = keypair(13)
        payload = random.Random(5).randbytes(1024 * 1024)
        assert decrypt(kp.private_key, encrypt_for(kp.public_key, payload)) == payload

    def test_truncated_envelope(self):
        kp = keypair(14)
        env = encrypt_for(kp.public_key, b"data")
        broken = Envelope(
            encrypted_key=env.encrypted_key[:-4], nonce=env.nonce, ciphertext=env.ciphertext
        )
        with pytest.raises(MalformedEnvelopeError):
            decrypt(kp.private_key, broken)

    def test_serialization_round_trip(self):
        env = encrypt_for(keypair(15).public_key, b"x" * 100)
        assert Envelope.from_bytes(env.to_bytes()) == env

    def test_from_bytes_rejects_garbage(self):
        with pytest.raises(MalformedEnvelopeError):
            Envelope.from_bytes(b"\x00\x00\x00\xff")
        env = encrypt_for(keypair(16).public_key, b"y")
        with pytest.raises(MalformedEnvelopeError):
            Envelope.from_bytes(env.to_bytes() + b"!")

    def test_seeded_rng_reproduces_envelope(self):
        kp = keypair(17)
        a = encrypt_for(kp.public_key, b"payload", rng=random.Random(1))
        b = encrypt_for(kp.public_key, b"payload", rng=random.Random(1))
        c = encrypt_for(kp.public_key, b"payload", rng=random.Random(2))
        assert a == b
        assert a != c

    def test_ciphertext_tamper_detected(self):
        kp = keypair(18)
        env = encrypt_for(kp.public_key, b"readings")
        mutated = bytearray(env.ciphertext)
        mutated[0] ^= 1
        with pytest.raises(DecryptionError):
            decrypt(kp.private_key, Envelope(env.encrypted_key, env.nonce, bytes(mutated)))


def test_golden_vectors_pin_the_scheme():
    # seed, message, public key, digest, signature: frozen once; any change
    # to the key derivation, hash, or signing layout breaks these
    from pathlib import Path

    fixture = Path(__file__).parent / "fixtures" / "crypto_vectors.txt"
    for line in fixture.read_text().splitlines():
        seed_hex, message_hex, public_hex, digest_hex, signature_hex = line.split("\t")
        kp = generate_keypair(bytes.fromhex(seed_hex))
        message = bytes.fromhex(message_hex)
        assert kp.public_key.hex() == public_hex
        assert digest(message).hex() == digest_hex
        assert sign(kp.private_key, message).hex() == signature_hex
        assert verify(kp.public_key, message, bytes.fromhex(signature_hex))


def test_round_trip_property_sweep():
    rng = random.Random(123)
    for _ in range(50):
        kp = generate_keypair(rng.randbytes(32))
        payload = rng.randbytes(rng.randrange(0, 512))
        env = encrypt_for(kp.public_key, payload, rng=rng)
        assert decrypt(kp.private_key, env) == payload
        sig = sign(kp.private_key, payload)
        assert verify(kp.public_key, payload, sig)
