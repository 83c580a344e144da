import base64
import hashlib
import secrets

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dabih import crypto
from dabih.crypto import (
    ChecksumMismatch,
    CompactKey,
    CryptoError,
    DatasetKey,
    DecapsulationError,
    FingerprintMismatch,
    HashMismatch,
    KeyParseError,
    KeyTooSmall,
    PaddingInvalid,
)


def crc32_reference(data: bytes) -> int:
    """Bitwise CRC-32 oracle: reflected polynomial 0xEDB88320, init and final
    xor 0xFFFFFFFF (IEEE 802.3). Independent of zlib."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


class TestDatasetKey:
    def test_length_and_freshness(self):
        k1 = crypto.generate_dataset_key()
        k2 = crypto.generate_dataset_key()
        assert len(k1.bytes) == 32
        assert k1.bytes != k2.bytes

    def test_uniformity_chi_square(self):
        # 10,000 draws -> 320,000 bytes; byte-value chi-square must not
        # reject uniformity at alpha = 0.001.
        from scipy.stats import chisquare

        counts = [0] * 256
        for _ in range(10_000):
            for b in crypto.generate_dataset_key().bytes:
                counts[b] += 1
        result = chisquare(counts)
        assert result.pvalue > 0.001

    def test_wrong_length_rejected(self):
        with pytest.raises(CryptoError):
            DatasetKey(b"\x00" * 31)

    def test_zeroize(self):
        key = crypto.generate_dataset_key()
        key.zeroize()
        assert key.bytes == b"\x00" * 32

    def test_repr_hides_material(self):
        key = crypto.generate_dataset_key()
        assert key.bytes.hex() not in repr(key)


class TestSealOpen:
    @pytest.mark.parametrize("size", [1, 15, 16, 17, 2 * 1024 * 1024, 8 * 1024 * 1024])
    def test_roundtrip(self, size):
        key = crypto.generate_dataset_key()
        data = secrets.token_bytes(size)
        sealed = crypto.seal_chunk(key, 0, data)
        assert crypto.open_chunk(key, sealed) == data

    def test_nist_cbc_aes256_known_answer(self):
        # NIST SP800-38A F.2.5 CBC-AES256.Encrypt, via the test-only IV
        # injection point. Our sealing appends a PKCS#7 padding block, so the
        # first 64 ciphertext bytes must equal the reference exactly.
        key = DatasetKey(bytes.fromhex(
            "603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4"))
        iv = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
        plaintext = bytes.fromhex(
            "6bc1bee22e409f96e93d7e117393172a"
            "ae2d8a571e03ac9c9eb76fac45af8e51"
            "30c81c46a35ce411e5fbc1191a0a52ef"
            "f69f2445df4f9b17ad2b417be66c3710")
        expected = bytes.fromhex(
            "f58c4c04d6e5f1ba779eabfb5f7bfbd6"
            "9cfc4e967edb808d679f777bc6702c7d"
            "39f23369a9d9bacfa530e26304231461"
            "b2eb05e2c39be9fcda6c19078c6a9d1b")
        sealed = crypto.seal_chunk(key, 0, plaintext, _iv=iv)
        assert sealed.ciphertext[:64] == expected
        assert len(sealed.ciphertext) == 80  # full padding block appended

    def test_fresh_iv_per_seal(self):
        key = crypto.generate_dataset_key()
        s1 = crypto.seal_chunk(key, 0, b"same chunk")
        s2 = crypto.seal_chunk(key, 0, b"same chunk")
        assert s1.iv != s2.iv
        assert s1.ciphertext != s2.ciphertext

    def test_ciphertext_length_is_padded_size(self):
        key = crypto.generate_dataset_key()
        for size in (1, 15, 16, 31, 32):
            sealed = crypto.seal_chunk(key, 0, b"x" * size)
            assert len(sealed.ciphertext) == (size // 16 + 1) * 16
            assert sealed.plain_size == size

    def test_crc32_matches_bitwise_oracle(self):
        key = crypto.generate_dataset_key()
        sealed = crypto.seal_chunk(key, 3, secrets.token_bytes(1000))
        assert sealed.crc32 == crc32_reference(sealed.ciphertext)

    def test_flipped_bit_is_checksum_mismatch(self):
        key = crypto.generate_dataset_key()
        sealed = crypto.seal_chunk(key, 0, secrets.token_bytes(100))
        tampered = bytearray(sealed.ciphertext)
        tampered[17] ^= 0x01
        assert crc32_reference(bytes(tampered)) != sealed.crc32
        broken = crypto.SealedChunk(
            index=sealed.index, iv=sealed.iv, ciphertext=bytes(tampered),
            plain_hash=sealed.plain_hash, crc32=sealed.crc32, plain_size=sealed.plain_size)
        with pytest.raises(ChecksumMismatch):
            crypto.open_chunk(key, broken)

    def test_wrong_key_never_returns_data(self):
        key = crypto.generate_dataset_key()
        wrong = crypto.generate_dataset_key()
        for _ in range(20):
            sealed = crypto.seal_chunk(key, 0, secrets.token_bytes(64))
            with pytest.raises((PaddingInvalid, HashMismatch)):
                crypto.open_chunk(wrong, sealed)

    def test_empty_chunk_rejected(self):
        with pytest.raises(CryptoError):
            crypto.seal_chunk(crypto.generate_dataset_key(), 0, b"")

    @settings(max_examples=60, deadline=None)
    @given(data=st.binary(min_size=1, max_size=8192))
    def test_roundtrip_property(self, data):
        key = crypto.generate_dataset_key()
        assert crypto.open_chunk(key, crypto.seal_chunk(key, 0, data)) == data

    def test_iv_uniqueness_bulk(self):
        key = crypto.generate_dataset_key()
        ivs = {crypto.seal_chunk(key, i, b"x").iv for i in range(100_000)}
        assert len(ivs) == 100_000

    def test_ciphertext_shares_no_aligned_block_with_plaintext(self):
        key = crypto.generate_dataset_key()
        data = secrets.token_bytes(64 * 1024)
        plain_windows = {data[i:i + 16] for i in range(len(data) - 15)}
        sealed = crypto.seal_chunk(key, 0, data)
        for i in range(0, len(sealed.ciphertext), 16):
            assert sealed.ciphertext[i:i + 16] not in plain_windows


class TestDatasetHash:
    def test_single_chunk_equals_sha256_of_digest(self):
        digest = hashlib.sha256(b"chunk-0").digest()
        assert crypto.dataset_hash([digest]) == hashlib.sha256(digest).digest()

    def test_concatenation_oracle(self):
        digests = [hashlib.sha256(bytes([i])).digest() for i in range(5)]
        assert crypto.dataset_hash(digests) == hashlib.sha256(b"".join(digests)).digest()

    def test_order_sensitive(self):
        digests = [hashlib.sha256(bytes([i])).digest() for i in range(3)]
        swapped = [digests[1], digests[0], digests[2]]
        assert crypto.dataset_hash(digests) != crypto.dataset_hash(swapped)

    def test_empty_rejected(self):
        with pytest.raises(CryptoError):
            crypto.dataset_hash([])

    @settings(max_examples=30, deadline=None)
    @given(st.permutations(list(range(4))))
    def test_permutation_injective(self, order):
        digests = [hashlib.sha256(bytes([i])).digest() for i in range(4)]
        permuted = [digests[i] for i in order]
        same = crypto.dataset_hash(permuted) == crypto.dataset_hash(digests)
        assert same == (list(order) == [0, 1, 2, 3])


class TestFingerprint:
    def test_empty_input_standard_vector(self):
        assert crypto.fingerprint(b"") == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")

    def test_hex_length(self):
        fp = crypto.fingerprint(b"anything")
        assert len(fp) == 64
        assert fp == fp.lower()

    def test_pem_whitespace_does_not_change_fingerprint(self, rsa_key):
        pem = rsa_key.public.pem()
        mangled = pem.replace(b"\n", b"\r\n") + b"\n\n"
        reimported = crypto.import_key(mangled)
        assert reimported.fingerprint == rsa_key.public.fingerprint


class TestEncapsulation:
    def test_roundtrip(self, rsa_key):
        key = crypto.generate_dataset_key()
        env = crypto.encapsulate(rsa_key.public, key)
        assert len(env.ciphertext) == 512
        assert env.recipient_fingerprint == rsa_key.fingerprint
        assert env.key_fingerprint == key.fingerprint()
        assert crypto.decapsulate(rsa_key, env).bytes == key.bytes

    def test_oaep_is_randomized(self, rsa_key):
        key = crypto.generate_dataset_key()
        env1 = crypto.encapsulate(rsa_key.public, key)
        env2 = crypto.encapsulate(rsa_key.public, key)
        assert env1.ciphertext != env2.ciphertext
        assert crypto.decapsulate(rsa_key, env1).bytes == key.bytes
        assert crypto.decapsulate(rsa_key, env2).bytes == key.bytes

    def test_wrong_recipient_fingerprint(self, rsa_key, rsa_key_b):
        env = crypto.encapsulate(rsa_key.public, crypto.generate_dataset_key())
        with pytest.raises(FingerprintMismatch):
            crypto.decapsulate(rsa_key_b, env)

    def test_tampered_ciphertext(self, rsa_key):
        env = crypto.encapsulate(rsa_key.public, crypto.generate_dataset_key())
        tampered = bytearray(env.ciphertext)
        tampered[100] ^= 0xFF
        broken = crypto.KeyEnvelope(env.recipient_fingerprint, bytes(tampered), env.key_fingerprint)
        with pytest.raises(DecapsulationError):
            crypto.decapsulate(rsa_key, broken)

    def test_envelope_b64_roundtrip(self, rsa_key):
        env = crypto.encapsulate(rsa_key.public, crypto.generate_dataset_key())
        again = crypto.KeyEnvelope.from_b64(
            env.recipient_fingerprint, env.ciphertext_b64(), env.key_fingerprint)
        assert again == env


class TestImport:
    def test_private_pem_roundtrip(self, rsa_key):
        imported = crypto.import_key(rsa_key.pem_pkcs8())
        assert isinstance(imported, crypto.PrivateKey)
        assert imported.fingerprint == rsa_key.fingerprint

    def test_private_der_roundtrip(self, rsa_key):
        imported = crypto.import_key(rsa_key.der_pkcs8())
        assert isinstance(imported, crypto.PrivateKey)
        assert imported.fingerprint == rsa_key.fingerprint

    def test_public_pem(self, rsa_key):
        imported = crypto.import_key(rsa_key.public.pem())
        assert isinstance(imported, crypto.PublicKey)
        assert imported.fingerprint == rsa_key.public.fingerprint

    def test_2048_bit_key_rejected(self):
        from cryptography.hazmat.primitives.asymmetric import rsa as _rsa
        from cryptography.hazmat.primitives import serialization

        small = _rsa.generate_private_key(public_exponent=65537, key_size=2048)
        pem = small.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption())
        with pytest.raises(KeyTooSmall):
            crypto.import_key(pem)

    def test_truncated_pem_is_parse_error(self, rsa_key):
        with pytest.raises(KeyParseError):
            crypto.import_key(rsa_key.pem_pkcs8()[:200])

    def test_garbage_is_parse_error(self):
        with pytest.raises(KeyParseError):
            crypto.import_key(b"not a key at all")


class TestCompactKey:
    def test_payload_framing(self, rsa_key):
        payload = crypto.compact_export(rsa_key)
        lines = payload.split("\n")
        assert lines[0] == "dabih-compact-key:v1"
        assert len(lines) == 6 and lines[5] == ""  # newline-terminated
        assert payload.isprintable() or all(c == "\n" or c.isprintable() for c in payload)

    def test_payload_smaller_than_pkcs8(self, rsa_key):
        payload = crypto.compact_export(rsa_key)
        assert len(payload.encode()) < 1600
        assert len(payload.encode()) < len(rsa_key.der_pkcs8())

    def test_p_smaller_than_q_in_payload(self, rsa_key):
        compact = crypto.parse_compact(crypto.compact_export(rsa_key))
        assert compact.p < compact.q

    def test_roundtrip_decrypts(self, rsa_key):
        key = crypto.generate_dataset_key()
        env = crypto.encapsulate(rsa_key.public, key)
        restored = crypto.import_compact(crypto.compact_export(rsa_key))
        assert restored.fingerprint == rsa_key.fingerprint
        assert crypto.decapsulate(restored, env).bytes == key.bytes

    def test_identity_on_epqd_and_crt_congruences(self, rsa_key):
        numbers = rsa_key._key.private_numbers()
        compact = crypto.parse_compact(crypto.compact_export(rsa_key))
        assert {compact.p, compact.q} == {numbers.p, numbers.q}
        assert compact.d == numbers.d
        assert compact.e == numbers.public_numbers.e
        expanded = crypto.expand_compact_key(compact)
        assert expanded.n == numbers.public_numbers.n
        assert expanded.dp == expanded.d % (expanded.p - 1)
        assert expanded.dq == expanded.d % (expanded.q - 1)
        assert (expanded.qi * expanded.p) % expanded.q == 1

    def test_toy_scale_crt_oracle(self):
        # Modular-arithmetic oracle at toy scale (test-only small-key path):
        # dp = 2753 mod 60, dq = 2753 mod 52, qi = 61^-1 mod 53 by
        # extended Euclid; e*d = 46801 = 15*3120 + 1.
        expanded = crypto.expand_compact_key(CompactKey(e=17, p=61, q=53, d=2753))
        assert expanded.n == 3233
        assert expanded.dp == 53
        assert expanded.dq == 49
        assert expanded.qi == 20
        assert (expanded.qi * expanded.p) % expanded.q == 1

    def test_inconsistent_parameters_rejected(self):
        with pytest.raises(KeyParseError):
            crypto.expand_compact_key(CompactKey(e=17, p=61, q=53, d=2754))
        with pytest.raises(KeyParseError):
            crypto.expand_compact_key(CompactKey(e=17, p=61, q=61, d=2753))

    def test_missing_header_rejected(self, rsa_key):
        payload = crypto.compact_export(rsa_key)
        with pytest.raises(KeyParseError):
            crypto.parse_compact(payload.split("\n", 1)[1])

    def test_payload_is_base64url(self, rsa_key):
        for line in crypto.compact_export(rsa_key).strip().split("\n")[1:]:
            base64.urlsafe_b64decode(line + "=" * (-len(line) % 4))
