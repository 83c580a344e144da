"""Content storage for sealed chunks and per-dataset recovery files.

Layout on the filesystem backend:

    <root>/<mnemonic>/chunk_<index>     sealed chunk bytes (ciphertext only)
    <root>/<mnemonic>/recovery.json     offline-recovery document

The recovery document plus one root private key is enough to reconstruct the
plaintext file with no database: it lists every chunk's IV, plaintext hash,
CRC-32 and size, and carries the dataset key encapsulated to each configured
root key. Plaintext never touches this layer.
"""

from __future__ import annotations

import base64
import json
import os
import shutil
import threading
from dataclasses import dataclass, field
from pathlib import Path

RECOVERY_VERSION = 1
RECOVERY_FILENAME = "recovery.json"
_STAGE_SUFFIX = ".reenc"


class StorageError(Exception):
    pass


class ChunkNotFound(StorageError):
    pass


class DuplicateChunk(StorageError):
    pass


@dataclass(frozen=True)
class RecoveryChunk:
    index: int
    iv: str  # hex
    plain_hash: str  # hex
    crc32: str  # 8 hex chars
    plain_size: int


@dataclass(frozen=True)
class RecoveryEnvelope:
    fingerprint: str  # root public key fingerprint, hex
    ciphertext: str  # base64


@dataclass(frozen=True)
class RecoveryFile:
    mnemonic: str
    filename: str
    dataset_hash: str
    chunks: list[RecoveryChunk] = field(default_factory=list)
    root_envelopes: list[RecoveryEnvelope] = field(default_factory=list)
    version: int = RECOVERY_VERSION

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "mnemonic": self.mnemonic,
            "filename": self.filename,
            "dataset_hash": self.dataset_hash,
            "chunks": [
                {
                    "index": c.index,
                    "iv": c.iv,
                    "plain_hash": c.plain_hash,
                    "crc32": c.crc32,
                    "plain_size": c.plain_size,
                }
                for c in self.chunks
            ],
            "root_envelopes": [
                {"fingerprint": e.fingerprint, "ciphertext": e.ciphertext}
                for e in self.root_envelopes
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RecoveryFile":
        doc = json.loads(text)
        if doc.get("version") != RECOVERY_VERSION:
            raise StorageError(f"unsupported recovery file version: {doc.get('version')!r}")
        return cls(
            mnemonic=doc["mnemonic"],
            filename=doc["filename"],
            dataset_hash=doc["dataset_hash"],
            chunks=[
                RecoveryChunk(
                    index=c["index"],
                    iv=c["iv"],
                    plain_hash=c["plain_hash"],
                    crc32=c["crc32"],
                    plain_size=c["plain_size"],
                )
                for c in doc["chunks"]
            ],
            root_envelopes=[
                RecoveryEnvelope(fingerprint=e["fingerprint"], ciphertext=e["ciphertext"])
                for e in doc["root_envelopes"]
            ],
        )

    @staticmethod
    def envelope_b64(ciphertext: bytes) -> str:
        return base64.b64encode(ciphertext).decode("ascii")


class FilesystemStorage:
    """Chunk + recovery storage rooted at one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._recovery_lock = threading.Lock()

    def _dataset_dir(self, mnemonic: str) -> Path:
        if not mnemonic or "/" in mnemonic or mnemonic.startswith("."):
            raise StorageError(f"invalid mnemonic: {mnemonic!r}")
        return self.root / mnemonic

    def chunk_path(self, mnemonic: str, index: int) -> Path:
        return self._dataset_dir(mnemonic) / f"chunk_{index}"

    def put_chunk(self, mnemonic: str, index: int, ciphertext: bytes) -> int:
        """Durably write one sealed chunk; refuses to overwrite."""
        path = self.chunk_path(mnemonic, index)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        except FileExistsError:
            raise DuplicateChunk(f"chunk {index} of {mnemonic} already stored") from None
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(ciphertext)
                f.flush()
                os.fsync(f.fileno())
        except OSError:
            path.unlink(missing_ok=True)
            raise
        return len(ciphertext)

    def get_chunk(self, mnemonic: str, index: int) -> bytes:
        path = self.chunk_path(mnemonic, index)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise ChunkNotFound(f"chunk {index} of {mnemonic} not found") from None

    def has_chunk(self, mnemonic: str, index: int) -> bool:
        return self.chunk_path(mnemonic, index).exists()

    # -- re-encryption staging: write all new chunks, then swap --------------

    def stage_chunk(self, mnemonic: str, index: int, ciphertext: bytes) -> None:
        path = self.chunk_path(mnemonic, index).with_name(f"chunk_{index}{_STAGE_SUFFIX}")
        path.write_bytes(ciphertext)

    def commit_staged(self, mnemonic: str) -> None:
        directory = self._dataset_dir(mnemonic)
        for staged in sorted(directory.glob(f"chunk_*{_STAGE_SUFFIX}")):
            os.replace(staged, staged.with_name(staged.name[: -len(_STAGE_SUFFIX)]))

    def discard_staged(self, mnemonic: str) -> None:
        directory = self._dataset_dir(mnemonic)
        if directory.exists():
            for staged in directory.glob(f"chunk_*{_STAGE_SUFFIX}"):
                staged.unlink(missing_ok=True)

    # -- recovery file ---------------------------------------------------------

    def recovery_path(self, mnemonic: str) -> Path:
        return self._dataset_dir(mnemonic) / RECOVERY_FILENAME

    def write_recovery(self, mnemonic: str, recovery: RecoveryFile) -> None:
        """Atomic write (temp + rename); rewritten after re-encryption."""
        path = self.recovery_path(mnemonic)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._recovery_lock:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(recovery.to_json(), encoding="utf-8")
            os.replace(tmp, path)

    def read_recovery(self, mnemonic: str) -> RecoveryFile:
        path = self.recovery_path(mnemonic)
        try:
            return RecoveryFile.from_json(path.read_text("utf-8"))
        except FileNotFoundError:
            raise ChunkNotFound(f"no recovery file for {mnemonic}") from None

    def delete_dataset_files(self, mnemonic: str) -> None:
        """Remove all chunk files and the recovery file. Idempotent."""
        directory = self._dataset_dir(mnemonic)
        if directory.exists():
            shutil.rmtree(directory)
