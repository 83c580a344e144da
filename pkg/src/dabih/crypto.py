"""Cryptographic core: chunk sealing, key encapsulation, hashing and key formats.

Everything in here is stateless (or locally randomized) and shared between the
server and the CLI. The scheme is two-stage envelope encryption:

  * file data is split into chunks, each sealed with AES-256-CBC under a
    per-dataset 32-byte key and a fresh random 16-byte IV,
  * the dataset key is encapsulated to recipients with RSA-4096-OAEP (SHA-256).

Chunk plaintext is authenticated by a SHA-256 hash stored next to the
ciphertext; the ciphertext additionally carries a CRC-32 (IEEE 802.3, as
implemented by zlib) as an emergency corruption check. All keys are identified
by SHA-256 fingerprints: raw key bytes for dataset keys, the canonical DER
(SubjectPublicKeyInfo) encoding for RSA keys.
"""

from __future__ import annotations

import base64
import hashlib
import math
import secrets
import zlib
from dataclasses import dataclass
from typing import Sequence, Union

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives import padding as sym_padding
from cryptography.hazmat.primitives.asymmetric import padding as asym_padding
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

KEY_SIZE = 32  # AES-256
IV_SIZE = 16  # AES block size
MIN_MODULUS_BITS = 4096
COMPACT_HEADER = "dabih-compact-key:v1"

_OAEP = asym_padding.OAEP(
    mgf=asym_padding.MGF1(algorithm=hashes.SHA256()),
    algorithm=hashes.SHA256(),
    label=None,
)


class CryptoError(Exception):
    """Base class for all crypto failures."""


class PaddingInvalid(CryptoError):
    """CBC unpadding failed: wrong key or corrupted ciphertext."""


class HashMismatch(CryptoError):
    """Decrypted plaintext does not match the recorded SHA-256 hash."""


class ChecksumMismatch(CryptoError):
    """Ciphertext CRC-32 does not match the recorded checksum."""


class FingerprintMismatch(CryptoError):
    """A key fingerprint does not match the expected value."""


class KeyTooSmall(CryptoError):
    """RSA modulus is below the required 4096 bits."""


class KeyParseError(CryptoError):
    """Key material could not be parsed."""


class DecapsulationError(CryptoError):
    """RSA-OAEP decryption failed (tampered envelope or wrong key)."""


def fingerprint(data: bytes) -> str:
    """SHA-256 of ``data`` as lowercase hex. Keys are fingerprinted over their
    canonical serialization: raw bytes for dataset keys, DER for RSA keys."""
    return hashlib.sha256(data).hexdigest()


class DatasetKey:
    """Symmetric per-dataset key. Exists in clear only transiently; call
    :meth:`zeroize` when the key leaves scope (best effort in CPython)."""

    __slots__ = ("_buf",)

    def __init__(self, raw: Union[bytes, bytearray]):
        if len(raw) != KEY_SIZE:
            raise CryptoError(f"dataset key must be {KEY_SIZE} bytes, got {len(raw)}")
        self._buf = bytearray(raw)

    @classmethod
    def generate(cls) -> "DatasetKey":
        return cls(secrets.token_bytes(KEY_SIZE))

    @property
    def bytes(self) -> bytes:
        return bytes(self._buf)

    def fingerprint(self) -> str:
        return fingerprint(self.bytes)

    def zeroize(self) -> None:
        for i in range(len(self._buf)):
            self._buf[i] = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetKey):
            return NotImplemented
        return secrets.compare_digest(self.bytes, other.bytes)

    def __hash__(self):
        raise TypeError("DatasetKey is not hashable")

    def __repr__(self) -> str:  # never leak key material through repr/logs
        return f"<DatasetKey fp={self.fingerprint()[:12]}…>"


def generate_dataset_key() -> DatasetKey:
    """Fresh 32-byte key from the OS CSPRNG."""
    return DatasetKey.generate()


@dataclass(frozen=True)
class SealedChunk:
    """One encrypted chunk plus the metadata needed to verify and decrypt it."""

    index: int
    iv: bytes
    ciphertext: bytes
    plain_hash: bytes  # SHA-256 of the plaintext
    crc32: int  # over the ciphertext
    plain_size: int

    @property
    def iv_hex(self) -> str:
        return self.iv.hex()

    @property
    def plain_hash_hex(self) -> str:
        return self.plain_hash.hex()

    @property
    def crc32_hex(self) -> str:
        return f"{self.crc32:08x}"


def seal_chunk(key: DatasetKey, index: int, data: bytes, *, _iv: bytes | None = None) -> SealedChunk:
    """Encrypt one chunk: SHA-256 the plaintext, PKCS#7-pad, AES-256-CBC under
    a fresh random IV, CRC-32 the ciphertext.

    ``_iv`` is a test-only injection point for known-answer vectors; production
    paths must leave it unset so every chunk gets a CSPRNG IV.
    """
    if not data:
        raise CryptoError("chunk data must be non-empty")
    iv = _iv if _iv is not None else secrets.token_bytes(IV_SIZE)
    if len(iv) != IV_SIZE:
        raise CryptoError(f"IV must be {IV_SIZE} bytes")
    padder = sym_padding.PKCS7(IV_SIZE * 8).padder()
    padded = padder.update(data) + padder.finalize()
    enc = Cipher(algorithms.AES(key.bytes), modes.CBC(iv)).encryptor()
    ciphertext = enc.update(padded) + enc.finalize()
    return SealedChunk(
        index=index,
        iv=iv,
        ciphertext=ciphertext,
        plain_hash=hashlib.sha256(data).digest(),
        crc32=zlib.crc32(ciphertext),
        plain_size=len(data),
    )


def open_chunk(key: DatasetKey, sealed: SealedChunk) -> bytes:
    """Decrypt and verify one chunk. Checks, in order: ciphertext CRC-32,
    CBC padding, plaintext SHA-256. Each failure raises a distinct error."""
    if zlib.crc32(sealed.ciphertext) != sealed.crc32:
        raise ChecksumMismatch(f"chunk {sealed.index}: ciphertext CRC-32 mismatch")
    dec = Cipher(algorithms.AES(key.bytes), modes.CBC(sealed.iv)).decryptor()
    padded = dec.update(sealed.ciphertext) + dec.finalize()
    unpadder = sym_padding.PKCS7(IV_SIZE * 8).unpadder()
    try:
        data = unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise PaddingInvalid(f"chunk {sealed.index}: invalid padding (wrong key or corruption)") from exc
    if hashlib.sha256(data).digest() != sealed.plain_hash:
        raise HashMismatch(f"chunk {sealed.index}: plaintext hash mismatch")
    return data


def dataset_hash(chunk_hashes: Sequence[bytes]) -> bytes:
    """SHA-256 over the concatenation of per-chunk plaintext digests, in chunk
    index order. This is the content identity used for dedup and resume."""
    if not chunk_hashes:
        raise CryptoError("dataset hash requires at least one chunk hash")
    h = hashlib.sha256()
    for digest in chunk_hashes:
        h.update(digest)
    return h.digest()


# ---------------------------------------------------------------------------
# RSA keys
# ---------------------------------------------------------------------------


class PublicKey:
    """RSA public key bound to its canonical DER form and fingerprint."""

    def __init__(self, key: rsa.RSAPublicKey, *, min_bits: int = MIN_MODULUS_BITS):
        if key.key_size < min_bits:
            raise KeyTooSmall(f"RSA modulus is {key.key_size} bits, need >= {min_bits}")
        self._key = key
        self.der: bytes = key.public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        self.fingerprint: str = fingerprint(self.der)

    @property
    def modulus(self) -> int:
        return self._key.public_numbers().n

    @property
    def exponent(self) -> int:
        return self._key.public_numbers().e

    @property
    def bits(self) -> int:
        return self._key.key_size

    def pem(self) -> bytes:
        return self._key.public_bytes(
            serialization.Encoding.PEM,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )

    @classmethod
    def from_der(cls, der: bytes, *, min_bits: int = MIN_MODULUS_BITS) -> "PublicKey":
        key = _load_public(der)
        return cls(key, min_bits=min_bits)


class PrivateKey:
    """RSA private key (PKCS#8 import/export, OAEP decapsulation)."""

    def __init__(self, key: rsa.RSAPrivateKey, *, min_bits: int = MIN_MODULUS_BITS):
        if key.key_size < min_bits:
            raise KeyTooSmall(f"RSA modulus is {key.key_size} bits, need >= {min_bits}")
        self._key = key
        self.public = PublicKey(key.public_key(), min_bits=min_bits)

    @property
    def fingerprint(self) -> str:
        return self.public.fingerprint

    @classmethod
    def generate(cls, bits: int = MIN_MODULUS_BITS) -> "PrivateKey":
        key = rsa.generate_private_key(public_exponent=65537, key_size=bits)
        return cls(key)

    def pem_pkcs8(self) -> bytes:
        return self._key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def der_pkcs8(self) -> bytes:
        return self._key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )


def _load_public(data: bytes) -> rsa.RSAPublicKey:
    last: Exception | None = None
    for load in (serialization.load_pem_public_key, serialization.load_der_public_key):
        try:
            key = load(data)
        except Exception as exc:
            last = exc
            continue
        if not isinstance(key, rsa.RSAPublicKey):
            raise KeyParseError("unsupported algorithm: expected an RSA key")
        return key
    raise KeyParseError(f"not a valid public key encoding: {last}")


def import_key(data: bytes, *, min_bits: int = MIN_MODULUS_BITS) -> Union[PrivateKey, PublicKey]:
    """Parse a PKCS#8 private key or a SubjectPublicKeyInfo public key, from
    PEM or DER. Rejects non-RSA keys and moduli below ``min_bits``.

    ``min_bits`` below 4096 is a test-only escape hatch for toy-scale math
    checks; production call sites never pass it.
    """
    last: Exception | None = None
    for load in (serialization.load_pem_private_key, serialization.load_der_private_key):
        try:
            key = load(data, password=None)
        except Exception as exc:
            last = exc
            continue
        if not isinstance(key, rsa.RSAPrivateKey):
            raise KeyParseError("unsupported algorithm: expected an RSA key")
        return PrivateKey(key, min_bits=min_bits)
    for load in (serialization.load_pem_public_key, serialization.load_der_public_key):
        try:
            key = load(data)
        except Exception as exc:
            last = exc
            continue
        if not isinstance(key, rsa.RSAPublicKey):
            raise KeyParseError("unsupported algorithm: expected an RSA key")
        return PublicKey(key, min_bits=min_bits)
    raise KeyParseError(f"not a valid PKCS#8 / SubjectPublicKeyInfo key: {last}")


# ---------------------------------------------------------------------------
# Key encapsulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyEnvelope:
    """A dataset key encrypted to one RSA public key.

    ``key_fingerprint`` is None only for envelopes restored from a recovery
    file, which does not record it; offline recovery verifies the decrypted
    chunks instead.
    """

    recipient_fingerprint: str
    ciphertext: bytes  # modulus-sized: 512 bytes for RSA-4096
    key_fingerprint: str | None  # SHA-256 of the enclosed dataset key bytes

    def ciphertext_b64(self) -> str:
        return base64.b64encode(self.ciphertext).decode("ascii")

    @classmethod
    def from_b64(cls, recipient_fingerprint: str, ciphertext_b64: str, key_fingerprint: str) -> "KeyEnvelope":
        return cls(recipient_fingerprint, base64.b64decode(ciphertext_b64), key_fingerprint)


def encapsulate(public: PublicKey, key: DatasetKey) -> KeyEnvelope:
    """RSA-OAEP(SHA-256) encryption of the 32 key bytes to ``public``."""
    ciphertext = public._key.encrypt(key.bytes, _OAEP)
    return KeyEnvelope(
        recipient_fingerprint=public.fingerprint,
        ciphertext=ciphertext,
        key_fingerprint=key.fingerprint(),
    )


def decapsulate(private: PrivateKey, envelope: KeyEnvelope) -> DatasetKey:
    """Recover the dataset key. The envelope must be addressed to ``private``'s
    public fingerprint, and the recovered key must match the recorded
    key fingerprint."""
    if envelope.recipient_fingerprint != private.fingerprint:
        raise FingerprintMismatch(
            "envelope is addressed to a different key "
            f"({envelope.recipient_fingerprint[:12]}… != {private.fingerprint[:12]}…)"
        )
    try:
        raw = private._key.decrypt(envelope.ciphertext, _OAEP)
    except Exception as exc:
        raise DecapsulationError(f"OAEP decryption failed: {exc}") from exc
    key = DatasetKey(raw)
    if envelope.key_fingerprint is not None and key.fingerprint() != envelope.key_fingerprint:
        raise FingerprintMismatch("recovered key does not match the envelope's key fingerprint")
    return key


# ---------------------------------------------------------------------------
# Compact private-key format (QR-sized)
# ---------------------------------------------------------------------------
#
# A PKCS#8 export of an RSA-4096 private key is ~2370 bytes of DER, too large
# for a comfortably scannable QR code. The key is fully determined by the two
# primes plus the exponents, so the compact form keeps only (e, p, q, d) and
# recomputes n, dp, dq, qi on import:
#
#     dabih-compact-key:v1
#     <e>  <p>  <q>  <d>     (one per line, unpadded base64url big-endian)
#
# terminated by a newline. p is written as the smaller prime.


@dataclass(frozen=True)
class CompactKey:
    """Minimal four-integer RSA private key."""

    e: int
    p: int
    q: int
    d: int


@dataclass(frozen=True)
class ExpandedKey:
    """A compact key with the derived fields restored.

    The CRT fields follow the convention dp = d mod (p-1), dq = d mod (q-1),
    qi = p^-1 mod q, applied to (p, q) as stored in the compact payload.
    """

    e: int
    p: int
    q: int
    d: int
    n: int
    dp: int
    dq: int
    qi: int

    def to_private_key(self, *, min_bits: int = MIN_MODULUS_BITS) -> PrivateKey:
        """Build a usable private key. The backend wants iqmp = q^-1 mod p, so
        that coefficient is derived here independently of ``qi``."""
        numbers = rsa.RSAPrivateNumbers(
            p=self.p,
            q=self.q,
            d=self.d,
            dmp1=self.dp,
            dmq1=self.dq,
            iqmp=pow(self.q, -1, self.p),
            public_numbers=rsa.RSAPublicNumbers(e=self.e, n=self.n),
        )
        return PrivateKey(numbers.private_key(), min_bits=min_bits)


def _b64url_uint(value: int) -> str:
    raw = value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _uint_b64url(text: str) -> int:
    pad = "=" * (-len(text) % 4)
    return int.from_bytes(base64.urlsafe_b64decode(text + pad), "big")


def compact_export(private: PrivateKey) -> str:
    """Serialize ``private`` to the compact text payload (QR-ready).

    The payload is strictly smaller than the PKCS#8 export of the same key and
    is plain printable ASCII.
    """
    numbers = private._key.private_numbers()
    p, q = numbers.p, numbers.q
    if p > q:  # payload convention: p is the smaller prime
        p, q = q, p
    lines = [
        COMPACT_HEADER,
        _b64url_uint(numbers.public_numbers.e),
        _b64url_uint(p),
        _b64url_uint(q),
        _b64url_uint(numbers.d),
    ]
    return "\n".join(lines) + "\n"


def parse_compact(payload: str) -> CompactKey:
    """Parse the compact text payload into its four integers."""
    lines = payload.strip().splitlines()
    if not lines or lines[0].strip() != COMPACT_HEADER:
        raise KeyParseError(f"missing '{COMPACT_HEADER}' header line")
    if len(lines) != 5:
        raise KeyParseError(f"expected 5 lines (header + e, p, q, d), got {len(lines)}")
    try:
        e, p, q, d = (_uint_b64url(line.strip()) for line in lines[1:])
    except Exception as exc:
        raise KeyParseError(f"malformed base64url integer: {exc}") from exc
    return CompactKey(e=e, p=p, q=q, d=d)


def expand_compact_key(compact: CompactKey) -> ExpandedKey:
    """Recompute n, dp, dq, qi from (e, p, q, d).

    Consistency is checked as e*d ≡ 1 (mod lcm(p-1, q-1)); that accepts both
    the phi(n) and the lambda(n) convention for d. Prime order is not enforced
    here: the formulas are applied to (p, q) as given.
    """
    e, p, q, d = compact.e, compact.p, compact.q, compact.d
    if p < 2 or q < 2 or p == q:
        raise KeyParseError("p and q must be two distinct primes")
    if (e * d) % math.lcm(p - 1, q - 1) != 1:
        raise KeyParseError("inconsistent parameters: e*d != 1 modulo lcm(p-1, q-1)")
    return ExpandedKey(
        e=e,
        p=p,
        q=q,
        d=d,
        n=p * q,
        dp=d % (p - 1),
        dq=d % (q - 1),
        qi=pow(p, -1, q),
    )


def import_compact(payload: str, *, min_bits: int = MIN_MODULUS_BITS) -> PrivateKey:
    """Parse + expand a compact payload into a usable private key."""
    return expand_compact_key(parse_compact(payload)).to_private_key(min_bits=min_bits)
