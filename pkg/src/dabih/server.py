"""The dabih API server.

HTTP+JSON under /api/v1: local token login, public-key enrollment, chunked
upload with dedup hints and resume, download (client-side or server-side
decryption), sharing, re-encryption, upload tokens and admin. All dataset keys
for in-flight uploads live in memory only and are zeroized on eviction; the
durable state (database + storage) never contains plaintext chunk bytes or a
clear dataset key.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterator, Optional

import click
import uvicorn
from fastapi import Body, Depends, FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from . import crypto, db as dbm
from .config import ServerConfig
from .db import ChunkRow, Database, Duplicate, EnvelopeRow, NotFound, UserRecord
from .mnemonics import WordLists, generate_mnemonic
from .storage import (
    DuplicateChunk,
    FilesystemStorage,
    RecoveryChunk,
    RecoveryEnvelope,
    RecoveryFile,
)

API_PREFIX = "/api/v1"


class ApiError(Exception):
    """Structured API failure with a stable machine-readable code."""

    def __init__(self, status: int, code: str, message: str, detail: Optional[dict] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail or {}


def _unauthorized(message: str = "authentication required") -> ApiError:
    return ApiError(401, "unauthorized", message)


def _forbidden(message: str = "not allowed") -> ApiError:
    return ApiError(403, "forbidden", message)


def _not_found(message: str) -> ApiError:
    return ApiError(404, "not_found", message)


# ---------------------------------------------------------------------------
# In-memory upload sessions
# ---------------------------------------------------------------------------


@dataclass
class UploadSession:
    """Key and bookkeeping for one in-flight upload. The key never leaves
    process memory in clear; eviction zeroizes it."""

    mnemonic: str
    owner: str
    filename: str
    key: crypto.DatasetKey
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    last_active: datetime = field(default_factory=lambda: datetime.now(timezone.utc))


class SessionTable:
    def __init__(self):
        self._sessions: dict[str, UploadSession] = {}
        self._lock = threading.Lock()

    def create(self, session: UploadSession) -> None:
        with self._lock:
            self._sessions[session.mnemonic] = session

    def get(self, mnemonic: str) -> Optional[UploadSession]:
        with self._lock:
            session = self._sessions.get(mnemonic)
            if session:
                session.last_active = datetime.now(timezone.utc)
            return session

    def evict(self, mnemonic: str) -> None:
        with self._lock:
            session = self._sessions.pop(mnemonic, None)
        if session:
            session.key.zeroize()

    def evict_idle(self, max_idle: timedelta) -> None:
        cutoff = datetime.now(timezone.utc) - max_idle
        with self._lock:
            stale = [m for m, s in self._sessions.items() if s.last_active < cutoff]
            evicted = [self._sessions.pop(m) for m in stale]
        for session in evicted:
            session.key.zeroize()


class RWLock:
    """Many readers or one writer. Downloads hold the read side; a dataset
    re-encryption holds the write side so nobody observes a half-swapped
    chunk set."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class LockTable:
    def __init__(self):
        self._locks: dict[str, RWLock] = {}
        self._lock = threading.Lock()

    def for_dataset(self, mnemonic: str) -> RWLock:
        with self._lock:
            if mnemonic not in self._locks:
                self._locks[mnemonic] = RWLock()
            return self._locks[mnemonic]


# ---------------------------------------------------------------------------
# Application state and auth
# ---------------------------------------------------------------------------


class ServerState:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.db = Database(config.db_path)
        self.storage = FilesystemStorage(config.storage_root)
        if config.adjectives_path and config.names_path:
            self.words = WordLists.from_files(config.adjectives_path, config.names_path)
        else:
            self.words = WordLists.bundled()
        self.sessions = SessionTable()
        self.locks = LockTable()
        self._load_root_keys()

    def _load_root_keys(self) -> None:
        from pathlib import Path

        for path in self.config.root_key_paths:
            key = crypto.import_key(Path(path).read_bytes())
            public = key.public if isinstance(key, crypto.PrivateKey) else key
            try:
                self.db.add_public_key(None, public.der, public.fingerprint,
                                       enabled=True, is_root=True)
            except Duplicate:
                pass  # already configured on a previous start

    def close(self) -> None:
        self.db.close()


@dataclass(frozen=True)
class AuthContext:
    user: UserRecord
    scope: str  # api | upload
    token: str


def _state(request: Request) -> ServerState:
    return request.app.state.dabih


def _authenticate(request: Request, authorization: Optional[str]) -> AuthContext:
    if not authorization or not authorization.startswith("Bearer "):
        raise _unauthorized("missing bearer token")
    token = authorization[len("Bearer "):].strip()
    state = _state(request)
    try:
        record = state.db.get_token(token)
        user = state.db.get_user(record.owner)
    except NotFound:
        raise _unauthorized("invalid or expired token") from None
    return AuthContext(user=user, scope=record.scope, token=token)


def require_auth(request: Request, authorization: Optional[str] = Header(None)) -> AuthContext:
    return _authenticate(request, authorization)


def require_api(request: Request, authorization: Optional[str] = Header(None)) -> AuthContext:
    """Full-scope auth: upload tokens are rejected here."""
    ctx = _authenticate(request, authorization)
    if ctx.scope != "api":
        raise ApiError(403, "token_scope", "upload tokens are valid only on upload endpoints")
    return ctx


def require_admin(request: Request, authorization: Optional[str] = Header(None)) -> AuthContext:
    ctx = require_api(request, authorization)
    if not ctx.user.is_admin:
        raise _forbidden("admin privileges required")
    return ctx


# ---------------------------------------------------------------------------
# Request bodies
# ---------------------------------------------------------------------------


class LoginRequest(BaseModel):
    user_id: str
    name: str = ""
    email: str = ""


class EnrollKeyRequest(BaseModel):
    pem: str


class StartUploadRequest(BaseModel):
    filename: str
    size: int = 0
    first_chunk_hash: Optional[str] = None


class KeyedRequest(BaseModel):
    key: str  # dataset key, base64


class ShareRequest(KeyedRequest):
    user_id: str
    permission: str = "read"


class CreateTokenRequest(BaseModel):
    ttl_days: Optional[int] = None


# ---------------------------------------------------------------------------
# Endpoint helpers
# ---------------------------------------------------------------------------


def _dataset_or_404(state: ServerState, mnemonic: str) -> dbm.DatasetRecord:
    try:
        dataset = state.db.get_dataset(mnemonic)
    except NotFound:
        raise _not_found(f"no such dataset: {mnemonic}") from None
    if dataset.state == "deleted":
        raise _not_found(f"no such dataset: {mnemonic}")
    return dataset


def _require_permission(state: ServerState, mnemonic: str, user: UserRecord, need: str) -> dbm.DatasetRecord:
    dataset = _dataset_or_404(state, mnemonic)
    if dataset.state != "complete":
        raise _not_found(f"no such dataset: {mnemonic}")
    permission = state.db.permission_for(mnemonic, user.user_id)
    if permission is None:
        raise _forbidden("you are not a member of this dataset")
    if need == "write" and permission != "write":
        raise _forbidden("write permission required")
    return dataset


def _enabled_key_or_error(state: ServerState, user_id: str) -> dbm.PublicKeyRecord:
    record = state.db.enabled_key_for(user_id)
    if record is None:
        raise ApiError(409, "no_enabled_key",
                       f"user {user_id} has no enabled public key")
    return record


def _client_key(body: KeyedRequest, state: ServerState, mnemonic: str) -> crypto.DatasetKey:
    """Decode and fingerprint-check a client-supplied dataset key. Every
    operation that accepts one runs through this gate before any use."""
    import base64

    try:
        raw = base64.b64decode(body.key, validate=True)
        key = crypto.DatasetKey(raw)
    except Exception:
        raise ApiError(400, "bad_key", "key must be 32 bytes, base64-encoded") from None
    expected = state.db.dataset_key_fingerprint(mnemonic)
    if key.fingerprint() != expected:
        key.zeroize()
        raise ApiError(409, "fingerprint_mismatch",
                       "submitted key does not match the dataset's key fingerprint")
    return key


def _sealed_from_row(row: ChunkRow, ciphertext: bytes) -> crypto.SealedChunk:
    return crypto.SealedChunk(
        index=row.index,
        iv=bytes.fromhex(row.iv),
        ciphertext=ciphertext,
        plain_hash=bytes.fromhex(row.plain_hash),
        crc32=int(row.crc32, 16),
        plain_size=row.plain_size,
    )


def _write_recovery_file(state: ServerState, dataset: dbm.DatasetRecord, dataset_hash: str) -> None:
    rows = state.db.chunk_rows(dataset.mnemonic)
    root_fps = {k.fingerprint for k in state.db.root_keys()}
    root_envelopes = [
        RecoveryEnvelope(fingerprint=e.recipient_fingerprint,
                         ciphertext=RecoveryFile.envelope_b64(e.ciphertext))
        for e in state.db.envelopes(dataset.mnemonic)
        if e.recipient_fingerprint in root_fps
    ]
    recovery = RecoveryFile(
        mnemonic=dataset.mnemonic,
        filename=dataset.filename,
        dataset_hash=dataset_hash,
        chunks=[
            RecoveryChunk(index=r.index, iv=r.iv, plain_hash=r.plain_hash,
                          crc32=r.crc32, plain_size=r.plain_size)
            for r in rows
        ],
        root_envelopes=root_envelopes,
    )
    state.storage.write_recovery(dataset.mnemonic, recovery)


def _dataset_view(state: ServerState, dataset: dbm.DatasetRecord, user: UserRecord) -> dict:
    return {
        "mnemonic": dataset.mnemonic,
        "owner": dataset.owner,
        "filename": dataset.filename,
        "size": dataset.size,
        "dataset_hash": dataset.dataset_hash,
        "created_at": dataset.created_at,
        "permission": state.db.permission_for(dataset.mnemonic, user.user_id),
        "members": [
            {"user_id": m.user_id, "permission": m.permission}
            for m in state.db.members(dataset.mnemonic)
        ],
    }


# ---------------------------------------------------------------------------
# Application factory
# ---------------------------------------------------------------------------


def create_app(config: ServerConfig) -> FastAPI:
    app = FastAPI(title="dabih", version="0.1.0", docs_url=None, redoc_url=None)
    state = ServerState(config)
    app.state.dabih = state

    @app.exception_handler(ApiError)
    def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    from fastapi.exceptions import RequestValidationError

    @app.exception_handler(RequestValidationError)
    def _validation_error(_request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"code": "bad_request", "message": "invalid request",
                     "detail": {"errors": [str(e.get("msg", e)) for e in exc.errors()]}},
        )

    # -- auth ---------------------------------------------------------------

    @app.post(API_PREFIX + "/auth/login")
    def login(body: LoginRequest, request: Request):
        # Local stand-in for an identity provider: the claims (id, name,
        # email) mirror OpenID so a real bridge can replace this endpoint
        # without schema changes.
        st = _state(request)
        user_id = body.user_id.strip()
        if not user_id:
            raise ApiError(400, "bad_request", "user_id must be non-empty")
        is_admin = user_id in st.config.admins
        user = st.db.upsert_user(user_id, body.name or user_id, body.email, is_admin)
        token = st.db.create_token(user_id, "api", timedelta(days=st.config.token_ttl_days))
        return {
            "token": token.token,
            "expires_at": token.expires_at,
            "user": {"user_id": user.user_id, "name": user.name,
                     "email": user.email, "is_admin": user.is_admin},
        }

    @app.get(API_PREFIX + "/auth/me")
    def me(request: Request, ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        key = st.db.enabled_key_for(ctx.user.user_id)
        return {
            "user_id": ctx.user.user_id,
            "name": ctx.user.name,
            "email": ctx.user.email,
            "is_admin": ctx.user.is_admin,
            "key_fingerprint": key.fingerprint if key else None,
        }

    # -- public keys ----------------------------------------------------------

    @app.post(API_PREFIX + "/keys", status_code=201)
    def enroll_key(body: EnrollKeyRequest, request: Request,
                   ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        try:
            key = crypto.import_key(body.pem.encode())
        except crypto.KeyTooSmall as exc:
            raise ApiError(400, "key_too_small", str(exc)) from None
        except crypto.CryptoError as exc:
            raise ApiError(400, "key_parse_error", str(exc)) from None
        if isinstance(key, crypto.PrivateKey):
            raise ApiError(400, "private_key_submitted",
                           "submit the PUBLIC key; never send a private key to the server")
        try:
            record = st.db.add_public_key(ctx.user.user_id, key.der, key.fingerprint)
        except Duplicate:
            raise ApiError(409, "duplicate", "this key is already enrolled") from None
        st.db.append_event(ctx.user.user_id, "key_enrolled", detail=key.fingerprint)
        return {"fingerprint": record.fingerprint, "enabled": record.enabled}

    @app.get(API_PREFIX + "/keys")
    def list_keys(request: Request, ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        return {
            "keys": [
                {"fingerprint": k.fingerprint, "enabled": k.enabled}
                for k in st.db.keys_for(ctx.user.user_id)
            ]
        }

    @app.post(API_PREFIX + "/keys/{fingerprint}/enable")
    def enable_key(fingerprint: str, request: Request,
                   ctx: AuthContext = Depends(require_admin)):
        st = _state(request)
        try:
            record = st.db.set_key_enabled(fingerprint, True)
        except NotFound:
            raise _not_found(f"no such key: {fingerprint}") from None
        st.db.append_event(ctx.user.user_id, "key_enabled", detail=fingerprint)
        return {"fingerprint": record.fingerprint, "enabled": record.enabled}

    # -- upload ---------------------------------------------------------------

    @app.post(API_PREFIX + "/upload", status_code=201)
    def start_upload(body: StartUploadRequest, request: Request,
                     ctx: AuthContext = Depends(require_auth)):
        st = _state(request)
        st.sessions.evict_idle(timedelta(hours=st.config.session_idle_hours))
        _enabled_key_or_error(st, ctx.user.user_id)
        if not body.filename:
            raise ApiError(400, "bad_request", "filename must be non-empty")

        duplicate_hint = None
        if body.first_chunk_hash:
            match = st.db.find_chunk_by_hash(ctx.user.user_id, body.first_chunk_hash.lower(), 0)
            if match is not None:
                duplicate_hint = {"mnemonic": match.mnemonic, "dataset_hash": match.dataset_hash}

        for _ in range(3):  # mnemonic uniqueness race is resolved by retrying
            mnemonic = generate_mnemonic(st.words, st.db.mnemonic_taken)
            try:
                st.db.create_dataset(mnemonic, ctx.user.user_id, body.filename, body.size)
                break
            except Duplicate:
                continue
        else:
            raise ApiError(500, "mnemonic_exhausted", "could not allocate a dataset id")

        st.sessions.create(UploadSession(
            mnemonic=mnemonic, owner=ctx.user.user_id,
            filename=body.filename, key=crypto.generate_dataset_key()))
        return {"mnemonic": mnemonic, "duplicate_hint": duplicate_hint}

    def _session_for_update(st: ServerState, mnemonic: str, ctx: AuthContext) -> UploadSession:
        dataset = _dataset_or_404(st, mnemonic)
        if dataset.owner != ctx.user.user_id:
            raise _forbidden("not your upload")
        if dataset.state != "uploading":
            raise ApiError(409, "not_uploading", f"dataset {mnemonic} is not being uploaded")
        session = st.sessions.get(mnemonic)
        if session is None:
            raise ApiError(409, "session_expired",
                           "upload session key was evicted; cancel and restart this upload")
        return session

    @app.put(API_PREFIX + "/upload/{mnemonic}/chunk/{index}")
    def upload_chunk(mnemonic: str, index: int, request: Request,
                     body: bytes = Body(..., media_type="application/octet-stream"),
                     x_chunk_hash: Optional[str] = Header(None),
                     ctx: AuthContext = Depends(require_auth)):
        st = _state(request)
        session = _session_for_update(st, mnemonic, ctx)
        if index < 0:
            raise ApiError(400, "bad_request", "chunk index must be >= 0")
        if not body:
            raise ApiError(400, "bad_request", "chunk body must be non-empty")
        if len(body) > st.config.chunk_size:
            raise ApiError(413, "size_over_limit",
                           f"chunk is {len(body)} bytes; limit is {st.config.chunk_size}")
        if not x_chunk_hash:
            raise ApiError(400, "bad_request", "x-chunk-hash header is required")
        plain_hash = crypto.fingerprint(body)
        if plain_hash != x_chunk_hash.lower():
            raise ApiError(400, "hash_mismatch",
                           "chunk bytes do not match the x-chunk-hash header")

        sealed = crypto.seal_chunk(session.key, index, body)
        try:
            stored_size = st.storage.put_chunk(mnemonic, index, sealed.ciphertext)
        except DuplicateChunk:
            raise ApiError(409, "duplicate", f"chunk {index} already uploaded") from None
        row = ChunkRow(mnemonic=mnemonic, index=index, iv=sealed.iv_hex,
                       plain_hash=plain_hash, crc32=sealed.crc32_hex,
                       plain_size=len(body), stored_size=stored_size)
        try:
            st.db.add_chunk_row(row)
        except Duplicate:
            raise ApiError(409, "duplicate", f"chunk {index} already uploaded") from None
        return {"index": index, "crc32": sealed.crc32_hex}

    @app.post(API_PREFIX + "/upload/{mnemonic}/finish")
    def finish_upload(mnemonic: str, request: Request,
                      ctx: AuthContext = Depends(require_auth)):
        st = _state(request)
        session = _session_for_update(st, mnemonic, ctx)
        rows = st.db.chunk_rows(mnemonic)
        present = {r.index for r in rows}
        if not rows:
            raise ApiError(409, "missing_chunks", "no chunks uploaded", {"missing": [0]})
        missing = sorted(set(range(max(present) + 1)) - present)
        if missing:
            raise ApiError(409, "missing_chunks",
                           f"upload is missing {len(missing)} chunk(s)", {"missing": missing})

        digest = crypto.dataset_hash([bytes.fromhex(r.plain_hash) for r in rows]).hex()
        owner_key = _enabled_key_or_error(st, session.owner)
        recipients = [owner_key] + st.db.root_keys()
        for record in recipients:
            public = crypto.PublicKey.from_der(record.der)
            envelope = crypto.encapsulate(public, session.key)
            st.db.put_envelope(EnvelopeRow(
                mnemonic=mnemonic,
                recipient_fingerprint=envelope.recipient_fingerprint,
                ciphertext=envelope.ciphertext,
                key_fingerprint=envelope.key_fingerprint,
            ))
        st.db.add_member(mnemonic, session.owner, "write")
        total = sum(r.plain_size for r in rows)
        st.db.set_dataset_complete(mnemonic, digest, total)
        _write_recovery_file(st, st.db.get_dataset(mnemonic), digest)
        st.sessions.evict(mnemonic)
        st.db.append_event(ctx.user.user_id, "upload_finished", mnemonic,
                           f"{len(rows)} chunks, {total} bytes")
        return {"mnemonic": mnemonic, "dataset_hash": digest}

    @app.delete(API_PREFIX + "/upload/{mnemonic}", status_code=204)
    def cancel_upload(mnemonic: str, request: Request,
                      ctx: AuthContext = Depends(require_auth)):
        st = _state(request)
        dataset = _dataset_or_404(st, mnemonic)
        if dataset.owner != ctx.user.user_id:
            raise _forbidden("not your upload")
        if dataset.state != "uploading":
            raise ApiError(409, "not_uploading", f"dataset {mnemonic} is not being uploaded")
        st.sessions.evict(mnemonic)
        st.storage.delete_dataset_files(mnemonic)
        st.db.delete_dataset_rows(mnemonic)
        st.db.append_event(ctx.user.user_id, "upload_canceled", mnemonic)
        return Response(status_code=204)

    @app.get(API_PREFIX + "/upload/incomplete")
    def list_incomplete(request: Request, ctx: AuthContext = Depends(require_auth)):
        st = _state(request)
        st.sessions.evict_idle(timedelta(hours=st.config.session_idle_hours))
        uploads = []
        for dataset in st.db.find_incomplete_uploads(ctx.user.user_id):
            chunks = st.db.chunk_rows(dataset.mnemonic)
            uploads.append({
                "mnemonic": dataset.mnemonic,
                "filename": dataset.filename,
                "size": dataset.size,
                "chunks": [{"index": c.index, "plain_hash": c.plain_hash} for c in chunks],
                "resumable": st.sessions.get(dataset.mnemonic) is not None,
            })
        return {"uploads": uploads}

    # -- datasets -----------------------------------------------------------------

    @app.get(API_PREFIX + "/datasets")
    def list_datasets(request: Request, ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        return {"datasets": [_dataset_view(st, d, ctx.user)
                             for d in st.db.datasets_for(ctx.user.user_id)]}

    @app.get(API_PREFIX + "/datasets/{mnemonic}")
    def get_dataset(mnemonic: str, request: Request,
                    ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        dataset = _require_permission(st, mnemonic, ctx.user, "read")
        view = _dataset_view(st, dataset, ctx.user)
        view["chunks"] = [
            {"index": c.index, "plain_hash": c.plain_hash, "plain_size": c.plain_size}
            for c in st.db.chunk_rows(mnemonic)
        ]
        return view

    @app.get(API_PREFIX + "/datasets/{mnemonic}/envelope")
    def get_envelope(mnemonic: str, request: Request,
                     ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        _require_permission(st, mnemonic, ctx.user, "read")
        key_record = _enabled_key_or_error(st, ctx.user.user_id)
        try:
            envelope = st.db.get_envelope(mnemonic, key_record.fingerprint)
        except NotFound:
            raise _not_found("no envelope for your key on this dataset; "
                             "ask a write member to re-share") from None
        return {
            "recipient_fingerprint": envelope.recipient_fingerprint,
            "ciphertext": RecoveryFile.envelope_b64(envelope.ciphertext),
            "key_fingerprint": envelope.key_fingerprint,
        }

    @app.get(API_PREFIX + "/datasets/{mnemonic}/chunk/{index}")
    def download_chunk(mnemonic: str, index: int, request: Request,
                       ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        _require_permission(st, mnemonic, ctx.user, "read")
        with st.locks.for_dataset(mnemonic).read():
            try:
                row = st.db.get_chunk_row(mnemonic, index)
            except NotFound:
                raise _not_found(f"no chunk {index} in {mnemonic}") from None
            ciphertext = st.storage.get_chunk(mnemonic, index)
        return Response(
            content=ciphertext,
            media_type="application/octet-stream",
            headers={
                "x-chunk-iv": row.iv,
                "x-chunk-hash": row.plain_hash,
                "x-chunk-crc32": row.crc32,
                "x-chunk-plain-size": str(row.plain_size),
            },
        )

    @app.post(API_PREFIX + "/datasets/{mnemonic}/download")
    def server_download(mnemonic: str, body: KeyedRequest, request: Request,
                        ctx: AuthContext = Depends(require_api)):
        # Server-side decryption mode: the caller sends the decapsulated key,
        # the server streams plaintext. Cleartext chunks exist in memory only.
        st = _state(request)
        dataset = _require_permission(st, mnemonic, ctx.user, "read")
        key = _client_key(body, st, mnemonic)
        rows = st.db.chunk_rows(mnemonic)
        lock = st.locks.for_dataset(mnemonic)
        st.db.append_event(ctx.user.user_id, "server_download", mnemonic)

        def stream():
            try:
                with lock.read():
                    for row in rows:
                        ciphertext = st.storage.get_chunk(mnemonic, row.index)
                        yield crypto.open_chunk(key, _sealed_from_row(row, ciphertext))
            finally:
                key.zeroize()

        return StreamingResponse(
            stream(),
            media_type="application/octet-stream",
            headers={
                "content-disposition": f'attachment; filename="{dataset.filename}"',
                "x-dataset-hash": dataset.dataset_hash or "",
            },
        )

    @app.post(API_PREFIX + "/datasets/{mnemonic}/share", status_code=201)
    def share(mnemonic: str, body: ShareRequest, request: Request,
              ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        _require_permission(st, mnemonic, ctx.user, "write")
        if body.permission not in ("read", "write"):
            raise ApiError(400, "bad_request", "permission must be 'read' or 'write'")
        try:
            recipient = st.db.get_user(body.user_id)
        except NotFound:
            raise _not_found(f"no such user: {body.user_id}") from None
        recipient_key = st.db.enabled_key_for(recipient.user_id)
        if recipient_key is None:
            raise ApiError(409, "recipient_keyless",
                           f"{recipient.user_id} has no enabled public key")
        key = _client_key(body, st, mnemonic)  # key-exchange-attack gate
        try:
            envelope = crypto.encapsulate(crypto.PublicKey.from_der(recipient_key.der), key)
        finally:
            key.zeroize()
        st.db.put_envelope(EnvelopeRow(
            mnemonic=mnemonic,
            recipient_fingerprint=envelope.recipient_fingerprint,
            ciphertext=envelope.ciphertext,
            key_fingerprint=envelope.key_fingerprint,
        ))
        st.db.add_member(mnemonic, recipient.user_id, body.permission)
        st.db.append_event(ctx.user.user_id, "share", mnemonic,
                           f"to {recipient.user_id} ({body.permission})")
        return {"user_id": recipient.user_id, "permission": body.permission,
                "recipient_fingerprint": envelope.recipient_fingerprint}

    @app.post(API_PREFIX + "/datasets/{mnemonic}/reencrypt")
    def reencrypt(mnemonic: str, body: KeyedRequest, request: Request,
                  ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        dataset = _require_permission(st, mnemonic, ctx.user, "write")
        old_key = _client_key(body, st, mnemonic)
        try:
            with st.locks.for_dataset(mnemonic).write():
                new_fingerprint = _rotate_dataset_key(st, dataset, old_key)
        except ApiError:
            raise
        except Exception as exc:
            # _rotate_dataset_key already rolled back; the old key and chunks
            # remain valid.
            raise ApiError(500, "storage_failure",
                           f"re-encryption aborted and rolled back: {exc}") from exc
        st.db.append_event(ctx.user.user_id, "reencrypt", mnemonic,
                           f"new key {new_fingerprint[:12]}…")
        return {"key_fingerprint": new_fingerprint}

    @app.delete(API_PREFIX + "/datasets/{mnemonic}", status_code=204)
    def delete_dataset(mnemonic: str, request: Request,
                       ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        dataset = _dataset_or_404(st, mnemonic)
        permission = st.db.permission_for(mnemonic, ctx.user.user_id)
        if permission != "write" and not ctx.user.is_admin:
            raise _forbidden("write permission required to delete")
        with st.locks.for_dataset(mnemonic).write():
            st.storage.delete_dataset_files(mnemonic)
            st.db.set_dataset_state(mnemonic, "deleted")
        st.db.append_event(ctx.user.user_id, "delete_dataset", mnemonic, dataset.filename)
        return Response(status_code=204)

    # -- upload tokens ---------------------------------------------------------

    @app.post(API_PREFIX + "/tokens", status_code=201)
    def create_token(body: CreateTokenRequest, request: Request,
                     ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        _enabled_key_or_error(st, ctx.user.user_id)
        ttl_days = body.ttl_days if body.ttl_days is not None else st.config.token_ttl_days
        record = st.db.create_token(ctx.user.user_id, "upload", timedelta(days=ttl_days))
        st.db.append_event(ctx.user.user_id, "token_created", detail=f"ttl={ttl_days}d")
        return {"token": record.token, "expires_at": record.expires_at}

    @app.get(API_PREFIX + "/tokens")
    def list_tokens(request: Request, ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        return {"tokens": [
            {"token": t.token, "expires_at": t.expires_at}
            for t in st.db.tokens_for(ctx.user.user_id, scope="upload")
        ]}

    @app.delete(API_PREFIX + "/tokens/{token}", status_code=204)
    def revoke_token(token: str, request: Request,
                     ctx: AuthContext = Depends(require_api)):
        st = _state(request)
        try:
            record = st.db.get_token(token)
        except NotFound:
            raise _not_found("unknown token") from None
        if record.owner != ctx.user.user_id:
            raise _forbidden("not your token")
        st.db.revoke_token(token)
        st.db.append_event(ctx.user.user_id, "token_revoked")
        return Response(status_code=204)

    # -- admin -------------------------------------------------------------------

    @app.get(API_PREFIX + "/admin/users")
    def admin_users(request: Request, ctx: AuthContext = Depends(require_admin)):
        st = _state(request)
        out = []
        for user in st.db.list_users():
            keys = st.db.keys_for(user.user_id)
            out.append({
                "user_id": user.user_id, "name": user.name, "email": user.email,
                "is_admin": user.is_admin,
                "keys": [{"fingerprint": k.fingerprint, "enabled": k.enabled} for k in keys],
            })
        return {"users": out}

    @app.get(API_PREFIX + "/admin/events")
    def admin_events(request: Request, ctx: AuthContext = Depends(require_admin),
                     limit: int = 1000):
        st = _state(request)
        return {"events": [
            {"timestamp": e.timestamp, "actor": e.actor, "action": e.action,
             "mnemonic": e.mnemonic, "detail": e.detail}
            for e in st.db.list_events(limit)
        ]}

    @app.get(API_PREFIX + "/healthz")
    def healthz():
        return {"status": "ok"}

    if config.static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="webclient")

    return app


def _rotate_dataset_key(state: ServerState, dataset: dbm.DatasetRecord,
                        old_key: crypto.DatasetKey) -> str:
    """Decrypt every chunk and re-seal it under a fresh key, then swap chunk
    metadata and envelopes atomically. On failure before the swap the old
    key, chunks and envelopes remain fully valid."""
    mnemonic = dataset.mnemonic
    new_key = crypto.generate_dataset_key()
    new_rows: list[ChunkRow] = []
    try:
        for row in state.db.chunk_rows(mnemonic):
            ciphertext = state.storage.get_chunk(mnemonic, row.index)
            plain = crypto.open_chunk(old_key, _sealed_from_row(row, ciphertext))
            sealed = crypto.seal_chunk(new_key, row.index, plain)
            state.storage.stage_chunk(mnemonic, row.index, sealed.ciphertext)
            new_rows.append(ChunkRow(
                mnemonic=mnemonic, index=row.index, iv=sealed.iv_hex,
                plain_hash=row.plain_hash, crc32=sealed.crc32_hex,
                plain_size=row.plain_size, stored_size=len(sealed.ciphertext)))

        member_ids = {dataset.owner} | {m.user_id for m in state.db.members(mnemonic)}
        recipients = [k for k in (state.db.enabled_key_for(uid) for uid in sorted(member_ids))
                      if k is not None]
        recipients += state.db.root_keys()
        envelopes = []
        for record in recipients:
            env = crypto.encapsulate(crypto.PublicKey.from_der(record.der), new_key)
            envelopes.append(EnvelopeRow(
                mnemonic=mnemonic, recipient_fingerprint=env.recipient_fingerprint,
                ciphertext=env.ciphertext, key_fingerprint=env.key_fingerprint))
    except Exception:
        state.storage.discard_staged(mnemonic)
        old_key.zeroize()
        new_key.zeroize()
        raise

    # Point of no return: one DB transaction swaps rows + envelopes, then the
    # staged files replace the old ciphertext.
    try:
        with state.db.transaction() as conn:
            conn.execute("DELETE FROM chunks WHERE mnemonic = ?", (mnemonic,))
            for chunk in new_rows:
                conn.execute(
                    "INSERT INTO chunks (mnemonic, idx, iv, plain_hash, crc32, plain_size, stored_size) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (chunk.mnemonic, chunk.index, chunk.iv, chunk.plain_hash,
                     chunk.crc32, chunk.plain_size, chunk.stored_size))
            conn.execute("DELETE FROM envelopes WHERE mnemonic = ?", (mnemonic,))
            for env in envelopes:
                conn.execute(
                    "INSERT INTO envelopes (mnemonic, recipient_fingerprint, ciphertext, key_fingerprint) "
                    "VALUES (?, ?, ?, ?)",
                    (env.mnemonic, env.recipient_fingerprint, env.ciphertext, env.key_fingerprint))
    except Exception:
        state.storage.discard_staged(mnemonic)
        old_key.zeroize()
        new_key.zeroize()
        raise
    state.storage.commit_staged(mnemonic)
    _write_recovery_file(state, dataset, dataset.dataset_hash or "")
    fingerprint = new_key.fingerprint()
    old_key.zeroize()
    new_key.zeroize()
    return fingerprint


@click.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to the YAML config file (or set DABIH_CONFIG).")
@click.option("--host", default=None, help="Override the listen address.")
@click.option("--port", default=None, type=int, help="Override the listen port.")
def main(config_path, host, port):
    """Run the dabih server."""
    config = ServerConfig.load(config_path)
    if host:
        config.host = host
    if port:
        config.port = port
    uvicorn.run(create_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()
