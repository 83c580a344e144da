"""HTTP client library for the dabih API, used by the CLI.

Thin typed wrapper over requests; raises :class:`ApiClientError` with the
server's structured error code on non-2xx responses and
:class:`NetworkError` when the server cannot be reached.
"""

from __future__ import annotations

import base64
import hashlib
from pathlib import Path
from typing import Iterator, Optional

import requests

from . import crypto
from .config import DEFAULT_CHUNK_SIZE


class ApiClientError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Optional[dict] = None):
        super().__init__(f"{code}: {message}")
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail or {}


class NetworkError(Exception):
    pass


def iter_file_chunks(path: str | Path, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Iterator[bytes]:
    with open(path, "rb") as f:
        while True:
            piece = f.read(chunk_size)
            if not piece:
                return
            yield piece


def file_dataset_hash(path: str | Path, chunk_size: int = DEFAULT_CHUNK_SIZE) -> str:
    """Chunk-wise SHA-256 then hash-of-hashes, identical to the server's
    computation for a file uploaded with the same chunk size."""
    digests = [hashlib.sha256(piece).digest() for piece in iter_file_chunks(path, chunk_size)]
    return crypto.dataset_hash(digests).hex()


class ApiClient:
    def __init__(self, base_url: str, token: Optional[str] = None, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self._session = requests.Session()

    def _headers(self, extra: Optional[dict] = None) -> dict:
        headers = dict(extra or {})
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _request(self, method: str, path: str, *, headers: Optional[dict] = None,
                 stream: bool = False, **kwargs) -> requests.Response:
        url = f"{self.base_url}/api/v1{path}"
        try:
            response = self._session.request(
                method, url, headers=self._headers(headers),
                timeout=self.timeout, stream=stream, **kwargs)
        except requests.RequestException as exc:
            raise NetworkError(f"cannot reach {self.base_url}: {exc}") from exc
        if response.status_code >= 400:
            try:
                body = response.json()
                raise ApiClientError(response.status_code, body.get("code", "error"),
                                     body.get("message", response.text),
                                     body.get("detail"))
            except ValueError:
                raise ApiClientError(response.status_code, "error", response.text) from None
        return response

    # -- auth / keys -------------------------------------------------------

    def login(self, user_id: str, name: str = "", email: str = "") -> dict:
        return self._request("POST", "/auth/login", json={
            "user_id": user_id, "name": name, "email": email}).json()

    def me(self) -> dict:
        return self._request("GET", "/auth/me").json()

    def enroll_key(self, pem: str) -> dict:
        return self._request("POST", "/keys", json={"pem": pem}).json()

    def list_keys(self) -> list[dict]:
        return self._request("GET", "/keys").json()["keys"]

    def enable_key(self, fingerprint: str) -> dict:
        return self._request("POST", f"/keys/{fingerprint}/enable").json()

    # -- upload -------------------------------------------------------------

    def start_upload(self, filename: str, size: int = 0,
                     first_chunk_hash: Optional[str] = None) -> dict:
        return self._request("POST", "/upload", json={
            "filename": filename, "size": size,
            "first_chunk_hash": first_chunk_hash}).json()

    def upload_chunk(self, mnemonic: str, index: int, data: bytes) -> dict:
        return self._request(
            "PUT", f"/upload/{mnemonic}/chunk/{index}",
            headers={"x-chunk-hash": hashlib.sha256(data).hexdigest(),
                     "content-type": "application/octet-stream"},
            data=data).json()

    def finish_upload(self, mnemonic: str) -> dict:
        return self._request("POST", f"/upload/{mnemonic}/finish").json()

    def cancel_upload(self, mnemonic: str) -> None:
        self._request("DELETE", f"/upload/{mnemonic}")

    def incomplete_uploads(self) -> list[dict]:
        return self._request("GET", "/upload/incomplete").json()["uploads"]

    # -- datasets -------------------------------------------------------------

    def datasets(self) -> list[dict]:
        return self._request("GET", "/datasets").json()["datasets"]

    def dataset(self, mnemonic: str) -> dict:
        return self._request("GET", f"/datasets/{mnemonic}").json()

    def envelope(self, mnemonic: str) -> crypto.KeyEnvelope:
        body = self._request("GET", f"/datasets/{mnemonic}/envelope").json()
        return crypto.KeyEnvelope.from_b64(
            body["recipient_fingerprint"], body["ciphertext"], body["key_fingerprint"])

    def download_chunk(self, mnemonic: str, index: int) -> crypto.SealedChunk:
        response = self._request("GET", f"/datasets/{mnemonic}/chunk/{index}")
        return crypto.SealedChunk(
            index=index,
            iv=bytes.fromhex(response.headers["x-chunk-iv"]),
            ciphertext=response.content,
            plain_hash=bytes.fromhex(response.headers["x-chunk-hash"]),
            crc32=int(response.headers["x-chunk-crc32"], 16),
            plain_size=int(response.headers["x-chunk-plain-size"]),
        )

    def server_download(self, mnemonic: str, key: crypto.DatasetKey) -> Iterator[bytes]:
        response = self._request(
            "POST", f"/datasets/{mnemonic}/download",
            json={"key": base64.b64encode(key.bytes).decode()}, stream=True)
        return response.iter_content(chunk_size=64 * 1024)

    def share(self, mnemonic: str, key: crypto.DatasetKey, user_id: str, permission: str) -> dict:
        return self._request("POST", f"/datasets/{mnemonic}/share", json={
            "key": base64.b64encode(key.bytes).decode(),
            "user_id": user_id, "permission": permission}).json()

    def reencrypt(self, mnemonic: str, key: crypto.DatasetKey) -> str:
        body = self._request("POST", f"/datasets/{mnemonic}/reencrypt", json={
            "key": base64.b64encode(key.bytes).decode()}).json()
        return body["key_fingerprint"]

    def delete_dataset(self, mnemonic: str) -> None:
        self._request("DELETE", f"/datasets/{mnemonic}")

    # -- tokens / admin -----------------------------------------------------

    def create_token(self, ttl_days: Optional[int] = None) -> dict:
        return self._request("POST", "/tokens", json={"ttl_days": ttl_days}).json()

    def list_tokens(self) -> list[dict]:
        return self._request("GET", "/tokens").json()["tokens"]

    def revoke_token(self, token: str) -> None:
        self._request("DELETE", f"/tokens/{token}")

    def admin_users(self) -> list[dict]:
        return self._request("GET", "/admin/users").json()["users"]

    def admin_events(self) -> list[dict]:
        return self._request("GET", "/admin/events").json()["events"]
