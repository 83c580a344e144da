"""Transactional metadata store on embedded SQLite.

Holds users, public keys, datasets, chunk metadata, key envelopes,
memberships, tokens and the append-only event log. All mutations go through
serialized transactions; the event log is never updated or deleted.
"""

from __future__ import annotations

import secrets
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Optional


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class Duplicate(StoreError):
    pass


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    name: str
    email: str
    is_admin: bool


@dataclass(frozen=True)
class PublicKeyRecord:
    key_id: int
    owner: Optional[str]  # root keys have no owner
    der: bytes
    fingerprint: str
    enabled: bool
    is_root: bool


@dataclass(frozen=True)
class DatasetRecord:
    mnemonic: str
    owner: str
    filename: str
    size: int
    dataset_hash: Optional[str]  # set iff state == "complete"
    created_at: str
    state: str  # uploading | complete | deleted


@dataclass(frozen=True)
class ChunkRow:
    mnemonic: str
    index: int
    iv: str
    plain_hash: str
    crc32: str
    plain_size: int
    stored_size: int


@dataclass(frozen=True)
class MemberRecord:
    mnemonic: str
    user_id: str
    permission: str  # read | write


@dataclass(frozen=True)
class EnvelopeRow:
    mnemonic: str
    recipient_fingerprint: str
    ciphertext: bytes
    key_fingerprint: str


@dataclass(frozen=True)
class TokenRecord:
    token: str
    owner: str
    scope: str  # api | upload
    expires_at: Optional[str]


@dataclass(frozen=True)
class EventRow:
    event_id: int
    timestamp: str
    actor: str
    action: str
    mnemonic: Optional[str]
    detail: str


_MIGRATIONS = [
    """
    CREATE TABLE users (
        user_id TEXT PRIMARY KEY,
        name TEXT NOT NULL,
        email TEXT NOT NULL,
        is_admin INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE public_keys (
        key_id INTEGER PRIMARY KEY AUTOINCREMENT,
        owner TEXT REFERENCES users(user_id),
        der BLOB NOT NULL,
        fingerprint TEXT NOT NULL UNIQUE,
        enabled INTEGER NOT NULL DEFAULT 0,
        is_root INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE datasets (
        mnemonic TEXT PRIMARY KEY,
        owner TEXT NOT NULL REFERENCES users(user_id),
        filename TEXT NOT NULL,
        size INTEGER NOT NULL DEFAULT 0,
        dataset_hash TEXT,
        created_at TEXT NOT NULL,
        state TEXT NOT NULL CHECK (state IN ('uploading', 'complete', 'deleted'))
    );
    CREATE TABLE chunks (
        mnemonic TEXT NOT NULL REFERENCES datasets(mnemonic),
        idx INTEGER NOT NULL,
        iv TEXT NOT NULL,
        plain_hash TEXT NOT NULL,
        crc32 TEXT NOT NULL,
        plain_size INTEGER NOT NULL,
        stored_size INTEGER NOT NULL,
        PRIMARY KEY (mnemonic, idx)
    );
    CREATE INDEX chunks_by_hash ON chunks (plain_hash);
    CREATE TABLE members (
        mnemonic TEXT NOT NULL REFERENCES datasets(mnemonic),
        user_id TEXT NOT NULL REFERENCES users(user_id),
        permission TEXT NOT NULL CHECK (permission IN ('read', 'write')),
        PRIMARY KEY (mnemonic, user_id)
    );
    CREATE TABLE envelopes (
        mnemonic TEXT NOT NULL REFERENCES datasets(mnemonic),
        recipient_fingerprint TEXT NOT NULL,
        ciphertext BLOB NOT NULL,
        key_fingerprint TEXT NOT NULL,
        PRIMARY KEY (mnemonic, recipient_fingerprint)
    );
    CREATE TABLE tokens (
        token TEXT PRIMARY KEY,
        owner TEXT NOT NULL REFERENCES users(user_id),
        scope TEXT NOT NULL CHECK (scope IN ('api', 'upload')),
        expires_at TEXT
    );
    CREATE TABLE events (
        event_id INTEGER PRIMARY KEY AUTOINCREMENT,
        timestamp TEXT NOT NULL,
        actor TEXT NOT NULL,
        action TEXT NOT NULL,
        mnemonic TEXT,
        detail TEXT NOT NULL DEFAULT ''
    );
    """,
]


class Database:
    """SQLite-backed store. Safe for concurrent use from multiple threads:
    every write runs inside an exclusive transaction guarded by one lock."""

    def __init__(self, path: str | Path):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        with self._lock:
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA foreign_keys=ON")
            self._migrate()

    def close(self) -> None:
        self._conn.close()

    def _migrate(self) -> None:
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL)"
        )
        row = self._conn.execute("SELECT version FROM schema_version").fetchone()
        current = row["version"] if row else 0
        for version, script in enumerate(_MIGRATIONS, start=1):
            if version > current:
                self._conn.executescript(script)
                current = version
        if row:
            self._conn.execute("UPDATE schema_version SET version = ?", (current,))
        else:
            self._conn.execute("INSERT INTO schema_version (version) VALUES (?)", (current,))
        self._conn.commit()

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        """Exclusive transaction; rolls back on any exception."""
        with self._lock:
            try:
                self._conn.execute("BEGIN IMMEDIATE")
                yield self._conn
                self._conn.commit()
            except Exception:
                self._conn.rollback()
                raise

    def _query(self, sql: str, params: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def _query_one(self, sql: str, params: tuple = ()) -> Optional[sqlite3.Row]:
        rows = self._query(sql, params)
        return rows[0] if rows else None

    # -- users ------------------------------------------------------------

    def upsert_user(self, user_id: str, name: str, email: str, is_admin: bool) -> UserRecord:
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO users (user_id, name, email, is_admin) VALUES (?, ?, ?, ?) "
                "ON CONFLICT(user_id) DO UPDATE SET name=excluded.name, "
                "email=excluded.email, is_admin=excluded.is_admin",
                (user_id, name, email, int(is_admin)),
            )
        return UserRecord(user_id, name, email, is_admin)

    def get_user(self, user_id: str) -> UserRecord:
        row = self._query_one("SELECT * FROM users WHERE user_id = ?", (user_id,))
        if row is None:
            raise NotFound(f"no such user: {user_id}")
        return UserRecord(row["user_id"], row["name"], row["email"], bool(row["is_admin"]))

    def list_users(self) -> list[UserRecord]:
        return [
            UserRecord(r["user_id"], r["name"], r["email"], bool(r["is_admin"]))
            for r in self._query("SELECT * FROM users ORDER BY user_id")
        ]

    # -- public keys -------------------------------------------------------

    def add_public_key(
        self, owner: Optional[str], der: bytes, fingerprint: str, *, enabled: bool = False, is_root: bool = False
    ) -> PublicKeyRecord:
        try:
            with self.transaction() as conn:
                cur = conn.execute(
                    "INSERT INTO public_keys (owner, der, fingerprint, enabled, is_root) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (owner, der, fingerprint, int(enabled), int(is_root)),
                )
                key_id = cur.lastrowid
        except sqlite3.IntegrityError as exc:
            raise Duplicate(f"public key already enrolled: {fingerprint}") from exc
        return PublicKeyRecord(key_id, owner, der, fingerprint, enabled, is_root)

    def _key_from_row(self, row: sqlite3.Row) -> PublicKeyRecord:
        return PublicKeyRecord(
            row["key_id"], row["owner"], row["der"], row["fingerprint"],
            bool(row["enabled"]), bool(row["is_root"]),
        )

    def get_key_by_fingerprint(self, fingerprint: str) -> PublicKeyRecord:
        row = self._query_one("SELECT * FROM public_keys WHERE fingerprint = ?", (fingerprint,))
        if row is None:
            raise NotFound(f"no such key: {fingerprint}")
        return self._key_from_row(row)

    def set_key_enabled(self, fingerprint: str, enabled: bool) -> PublicKeyRecord:
        """Enable/disable a key. At most one enabled key per user: enabling a
        key disables the owner's other keys."""
        with self.transaction() as conn:
            row = conn.execute(
                "SELECT * FROM public_keys WHERE fingerprint = ?", (fingerprint,)
            ).fetchone()
            if row is None:
                raise NotFound(f"no such key: {fingerprint}")
            if enabled and row["owner"] is not None:
                conn.execute(
                    "UPDATE public_keys SET enabled = 0 WHERE owner = ? AND fingerprint != ?",
                    (row["owner"], fingerprint),
                )
            conn.execute(
                "UPDATE public_keys SET enabled = ? WHERE fingerprint = ?",
                (int(enabled), fingerprint),
            )
        return self.get_key_by_fingerprint(fingerprint)

    def enabled_key_for(self, user_id: str) -> Optional[PublicKeyRecord]:
        row = self._query_one(
            "SELECT * FROM public_keys WHERE owner = ? AND enabled = 1 AND is_root = 0",
            (user_id,),
        )
        return self._key_from_row(row) if row else None

    def keys_for(self, user_id: str) -> list[PublicKeyRecord]:
        return [
            self._key_from_row(r)
            for r in self._query("SELECT * FROM public_keys WHERE owner = ? ORDER BY key_id", (user_id,))
        ]

    def root_keys(self) -> list[PublicKeyRecord]:
        return [
            self._key_from_row(r)
            for r in self._query("SELECT * FROM public_keys WHERE is_root = 1 AND enabled = 1")
        ]

    # -- datasets ----------------------------------------------------------

    def mnemonic_taken(self, mnemonic: str) -> bool:
        return self._query_one("SELECT 1 FROM datasets WHERE mnemonic = ?", (mnemonic,)) is not None

    def create_dataset(self, mnemonic: str, owner: str, filename: str, size: int) -> DatasetRecord:
        created_at = _utcnow()
        try:
            with self.transaction() as conn:
                conn.execute(
                    "INSERT INTO datasets (mnemonic, owner, filename, size, created_at, state) "
                    "VALUES (?, ?, ?, ?, ?, 'uploading')",
                    (mnemonic, owner, filename, size, created_at),
                )
        except sqlite3.IntegrityError as exc:
            raise Duplicate(f"mnemonic already taken: {mnemonic}") from exc
        return DatasetRecord(mnemonic, owner, filename, size, None, created_at, "uploading")

    def _dataset_from_row(self, row: sqlite3.Row) -> DatasetRecord:
        return DatasetRecord(
            row["mnemonic"], row["owner"], row["filename"], row["size"],
            row["dataset_hash"], row["created_at"], row["state"],
        )

    def get_dataset(self, mnemonic: str) -> DatasetRecord:
        row = self._query_one("SELECT * FROM datasets WHERE mnemonic = ?", (mnemonic,))
        if row is None:
            raise NotFound(f"no such dataset: {mnemonic}")
        return self._dataset_from_row(row)

    def set_dataset_complete(self, mnemonic: str, dataset_hash: str, size: int) -> None:
        with self.transaction() as conn:
            cur = conn.execute(
                "UPDATE datasets SET dataset_hash = ?, size = ?, state = 'complete' "
                "WHERE mnemonic = ? AND state = 'uploading'",
                (dataset_hash, size, mnemonic),
            )
            if cur.rowcount != 1:
                raise NotFound(f"no uploading dataset: {mnemonic}")

    def set_dataset_state(self, mnemonic: str, state: str) -> None:
        with self.transaction() as conn:
            cur = conn.execute("UPDATE datasets SET state = ? WHERE mnemonic = ?", (state, mnemonic))
            if cur.rowcount != 1:
                raise NotFound(f"no such dataset: {mnemonic}")

    def delete_dataset_rows(self, mnemonic: str) -> None:
        """Hard removal of an aborted upload (never-completed datasets only)."""
        with self.transaction() as conn:
            conn.execute("DELETE FROM chunks WHERE mnemonic = ?", (mnemonic,))
            conn.execute("DELETE FROM envelopes WHERE mnemonic = ?", (mnemonic,))
            conn.execute("DELETE FROM members WHERE mnemonic = ?", (mnemonic,))
            conn.execute("DELETE FROM datasets WHERE mnemonic = ?", (mnemonic,))

    def datasets_for(self, user_id: str) -> list[DatasetRecord]:
        """Complete datasets the user owns or is a member of."""
        rows = self._query(
            "SELECT DISTINCT d.* FROM datasets d "
            "LEFT JOIN members m ON m.mnemonic = d.mnemonic "
            "WHERE d.state = 'complete' AND (d.owner = ? OR m.user_id = ?) "
            "ORDER BY d.created_at",
            (user_id, user_id),
        )
        return [self._dataset_from_row(r) for r in rows]

    def find_dataset_by_hash(self, user_id: str, dataset_hash: str) -> Optional[DatasetRecord]:
        row = self._query_one(
            "SELECT * FROM datasets WHERE owner = ? AND dataset_hash = ? AND state = 'complete'",
            (user_id, dataset_hash),
        )
        return self._dataset_from_row(row) if row else None

    def find_chunk_by_hash(self, user_id: str, plain_hash: str, index: int = 0) -> Optional[DatasetRecord]:
        """Duplicate-detection probe: does a chunk with this plaintext hash at
        this index exist among the user's own non-deleted datasets?"""
        row = self._query_one(
            "SELECT d.* FROM chunks c JOIN datasets d ON d.mnemonic = c.mnemonic "
            "WHERE d.owner = ? AND d.state = 'complete' AND c.idx = ? AND c.plain_hash = ? "
            "ORDER BY d.created_at LIMIT 1",
            (user_id, index, plain_hash),
        )
        return self._dataset_from_row(row) if row else None

    def find_incomplete_uploads(self, user_id: str) -> list[DatasetRecord]:
        rows = self._query(
            "SELECT * FROM datasets WHERE owner = ? AND state = 'uploading' ORDER BY created_at",
            (user_id,),
        )
        return [self._dataset_from_row(r) for r in rows]

    # -- chunks --------------------------------------------------------------

    def add_chunk_row(self, chunk: ChunkRow) -> None:
        try:
            with self.transaction() as conn:
                conn.execute(
                    "INSERT INTO chunks (mnemonic, idx, iv, plain_hash, crc32, plain_size, stored_size) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (chunk.mnemonic, chunk.index, chunk.iv, chunk.plain_hash,
                     chunk.crc32, chunk.plain_size, chunk.stored_size),
                )
        except sqlite3.IntegrityError as exc:
            raise Duplicate(f"chunk {chunk.index} of {chunk.mnemonic} already recorded") from exc

    def chunk_rows(self, mnemonic: str) -> list[ChunkRow]:
        return [
            ChunkRow(r["mnemonic"], r["idx"], r["iv"], r["plain_hash"], r["crc32"],
                     r["plain_size"], r["stored_size"])
            for r in self._query("SELECT * FROM chunks WHERE mnemonic = ? ORDER BY idx", (mnemonic,))
        ]

    def get_chunk_row(self, mnemonic: str, index: int) -> ChunkRow:
        row = self._query_one("SELECT * FROM chunks WHERE mnemonic = ? AND idx = ?", (mnemonic, index))
        if row is None:
            raise NotFound(f"no chunk {index} in {mnemonic}")
        return ChunkRow(row["mnemonic"], row["idx"], row["iv"], row["plain_hash"],
                        row["crc32"], row["plain_size"], row["stored_size"])

    def replace_chunk_rows(self, mnemonic: str, chunks: list[ChunkRow]) -> None:
        """Atomic swap of a dataset's chunk metadata (re-encryption)."""
        with self.transaction() as conn:
            conn.execute("DELETE FROM chunks WHERE mnemonic = ?", (mnemonic,))
            for chunk in chunks:
                conn.execute(
                    "INSERT INTO chunks (mnemonic, idx, iv, plain_hash, crc32, plain_size, stored_size) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (chunk.mnemonic, chunk.index, chunk.iv, chunk.plain_hash,
                     chunk.crc32, chunk.plain_size, chunk.stored_size),
                )

    # -- members ---------------------------------------------------------------

    def add_member(self, mnemonic: str, user_id: str, permission: str) -> None:
        if permission not in ("read", "write"):
            raise StoreError(f"invalid permission: {permission}")
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO members (mnemonic, user_id, permission) VALUES (?, ?, ?) "
                "ON CONFLICT(mnemonic, user_id) DO UPDATE SET permission=excluded.permission",
                (mnemonic, user_id, permission),
            )

    def remove_member(self, mnemonic: str, user_id: str) -> None:
        """Drop a membership row. This alone does not revoke cryptographic
        access: a recipient who held the key can still read old ciphertext,
        so callers should rotate the dataset key afterwards."""
        with self.transaction() as conn:
            cur = conn.execute(
                "DELETE FROM members WHERE mnemonic = ? AND user_id = ?", (mnemonic, user_id)
            )
            if cur.rowcount != 1:
                raise NotFound(f"{user_id} is not a member of {mnemonic}")

    def members(self, mnemonic: str) -> list[MemberRecord]:
        return [
            MemberRecord(r["mnemonic"], r["user_id"], r["permission"])
            for r in self._query("SELECT * FROM members WHERE mnemonic = ? ORDER BY user_id", (mnemonic,))
        ]

    def permission_for(self, mnemonic: str, user_id: str) -> Optional[str]:
        """Effective permission; the owner has implicit write."""
        ds = self.get_dataset(mnemonic)
        if ds.owner == user_id:
            return "write"
        row = self._query_one(
            "SELECT permission FROM members WHERE mnemonic = ? AND user_id = ?", (mnemonic, user_id)
        )
        return row["permission"] if row else None

    # -- envelopes -------------------------------------------------------------

    def put_envelope(self, env: EnvelopeRow) -> None:
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO envelopes (mnemonic, recipient_fingerprint, ciphertext, key_fingerprint) "
                "VALUES (?, ?, ?, ?) "
                "ON CONFLICT(mnemonic, recipient_fingerprint) DO UPDATE "
                "SET ciphertext=excluded.ciphertext, key_fingerprint=excluded.key_fingerprint",
                (env.mnemonic, env.recipient_fingerprint, env.ciphertext, env.key_fingerprint),
            )

    def get_envelope(self, mnemonic: str, recipient_fingerprint: str) -> EnvelopeRow:
        row = self._query_one(
            "SELECT * FROM envelopes WHERE mnemonic = ? AND recipient_fingerprint = ?",
            (mnemonic, recipient_fingerprint),
        )
        if row is None:
            raise NotFound(f"no envelope for {recipient_fingerprint[:12]}… on {mnemonic}")
        return EnvelopeRow(row["mnemonic"], row["recipient_fingerprint"],
                           row["ciphertext"], row["key_fingerprint"])

    def delete_envelope(self, mnemonic: str, recipient_fingerprint: str) -> None:
        with self.transaction() as conn:
            cur = conn.execute(
                "DELETE FROM envelopes WHERE mnemonic = ? AND recipient_fingerprint = ?",
                (mnemonic, recipient_fingerprint),
            )
            if cur.rowcount != 1:
                raise NotFound(f"no envelope for {recipient_fingerprint[:12]}… on {mnemonic}")

    def envelopes(self, mnemonic: str) -> list[EnvelopeRow]:
        return [
            EnvelopeRow(r["mnemonic"], r["recipient_fingerprint"], r["ciphertext"], r["key_fingerprint"])
            for r in self._query("SELECT * FROM envelopes WHERE mnemonic = ?", (mnemonic,))
        ]

    def replace_envelopes(self, mnemonic: str, envelopes: list[EnvelopeRow]) -> None:
        """Atomic swap of all envelopes for a dataset (re-encryption)."""
        with self.transaction() as conn:
            conn.execute("DELETE FROM envelopes WHERE mnemonic = ?", (mnemonic,))
            for env in envelopes:
                conn.execute(
                    "INSERT INTO envelopes (mnemonic, recipient_fingerprint, ciphertext, key_fingerprint) "
                    "VALUES (?, ?, ?, ?)",
                    (env.mnemonic, env.recipient_fingerprint, env.ciphertext, env.key_fingerprint),
                )

    def dataset_key_fingerprint(self, mnemonic: str) -> str:
        """Fingerprint of the dataset's current key (identical on all rows)."""
        row = self._query_one("SELECT key_fingerprint FROM envelopes WHERE mnemonic = ? LIMIT 1", (mnemonic,))
        if row is None:
            raise NotFound(f"no envelopes for dataset: {mnemonic}")
        return row["key_fingerprint"]

    # -- tokens --------------------------------------------------------------

    def create_token(self, owner: str, scope: str, ttl: Optional[timedelta]) -> TokenRecord:
        token = secrets.token_urlsafe(32)
        expires_at = (datetime.now(timezone.utc) + ttl).isoformat() if ttl else None
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO tokens (token, owner, scope, expires_at) VALUES (?, ?, ?, ?)",
                (token, owner, scope, expires_at),
            )
        return TokenRecord(token, owner, scope, expires_at)

    def get_token(self, token: str) -> TokenRecord:
        row = self._query_one("SELECT * FROM tokens WHERE token = ?", (token,))
        if row is None:
            raise NotFound("unknown token")
        record = TokenRecord(row["token"], row["owner"], row["scope"], row["expires_at"])
        if record.expires_at is not None:
            if datetime.fromisoformat(record.expires_at) <= datetime.now(timezone.utc):
                raise NotFound("token expired")
        return record

    def revoke_token(self, token: str) -> None:
        with self.transaction() as conn:
            cur = conn.execute("DELETE FROM tokens WHERE token = ?", (token,))
            if cur.rowcount != 1:
                raise NotFound("unknown token")

    def tokens_for(self, owner: str, scope: Optional[str] = None) -> list[TokenRecord]:
        sql = "SELECT * FROM tokens WHERE owner = ?"
        params: tuple = (owner,)
        if scope:
            sql += " AND scope = ?"
            params += (scope,)
        return [
            TokenRecord(r["token"], r["owner"], r["scope"], r["expires_at"])
            for r in self._query(sql, params)
        ]

    # -- events --------------------------------------------------------------

    def append_event(self, actor: str, action: str, mnemonic: Optional[str] = None, detail: str = "") -> None:
        with self.transaction() as conn:
            conn.execute(
                "INSERT INTO events (timestamp, actor, action, mnemonic, detail) VALUES (?, ?, ?, ?, ?)",
                (_utcnow(), actor, action, mnemonic, detail),
            )

    def list_events(self, limit: int = 1000) -> list[EventRow]:
        return [
            EventRow(r["event_id"], r["timestamp"], r["actor"], r["action"], r["mnemonic"], r["detail"])
            for r in self._query("SELECT * FROM events ORDER BY event_id DESC LIMIT ?", (limit,))
        ]
