"""dabih command line client.

Key lifecycle, uploads with dedup + resume, downloads with local decryption,
sharing, key rotation, upload tokens and offline root-key recovery.

Exit codes: 0 success, 2 auth, 3 integrity, 4 not found / forbidden,
5 network, 1 anything else.
"""

from __future__ import annotations

import base64
import hashlib
import os
import stat
import sys
import tempfile
import zipfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click
import yaml

from . import crypto
from .client import ApiClient, ApiClientError, NetworkError, file_dataset_hash, iter_file_chunks
from .config import DEFAULT_CHUNK_SIZE
from .storage import RecoveryFile

EXIT_AUTH = 2
EXIT_INTEGRITY = 3
EXIT_NOT_FOUND = 4
EXIT_NETWORK = 5

_INTEGRITY_CODES = {"hash_mismatch", "fingerprint_mismatch", "checksum_mismatch"}


@dataclass
class ClientConfig:
    server: str = "http://127.0.0.1:8080"
    token: Optional[str] = None
    private_key: Optional[str] = None
    chunk_size: int = DEFAULT_CHUNK_SIZE
    parallel: int = 4
    quiet: bool = False
    config_path: Path = Path.home() / ".config" / "dabih" / "config"


def _load_config(config_path: Optional[str], overrides: dict) -> ClientConfig:
    """Resolution order: command-line flags > environment > config file."""
    cfg = ClientConfig()
    path = Path(config_path or os.environ.get("DABIH_CONFIG") or cfg.config_path)
    cfg.config_path = path
    if path.exists():
        loaded = yaml.safe_load(path.read_text("utf-8")) or {}
        for field in ("server", "token", "private_key", "chunk_size", "parallel"):
            if field in loaded and loaded[field] is not None:
                setattr(cfg, field, loaded[field])
    env_map = {
        "server": "DABIH_SERVER",
        "token": "DABIH_TOKEN",
        "private_key": "DABIH_PRIVATE_KEY",
        "chunk_size": "DABIH_CHUNK_SIZE",
        "parallel": "DABIH_PARALLEL",
    }
    for field, env_name in env_map.items():
        value = os.environ.get(env_name)
        if value is not None:
            if field in ("chunk_size", "parallel"):
                value = int(value)
            setattr(cfg, field, value)
    for field, value in overrides.items():
        if value is not None:
            setattr(cfg, field, value)
    cfg.chunk_size = int(cfg.chunk_size)
    cfg.parallel = max(1, int(cfg.parallel))
    return cfg


def _save_config(cfg: ClientConfig) -> None:
    cfg.config_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"server": cfg.server, "token": cfg.token}
    if cfg.private_key:
        doc["private_key"] = cfg.private_key
    cfg.config_path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    cfg.config_path.chmod(0o600)


def _fail(message: str, code: int) -> "NoReturn":  # noqa: F821
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _handle_errors(fn):
    """Map client/crypto failures onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NetworkError as exc:
            _fail(str(exc), EXIT_NETWORK)
        except ApiClientError as exc:
            if exc.status == 401:
                _fail(exc.message, EXIT_AUTH)
            if exc.code in _INTEGRITY_CODES:
                _fail(exc.message, EXIT_INTEGRITY)
            if exc.status in (403, 404):
                _fail(exc.message, EXIT_NOT_FOUND)
            _fail(f"{exc.code}: {exc.message}", 1)
        except (crypto.ChecksumMismatch, crypto.HashMismatch, crypto.PaddingInvalid,
                crypto.FingerprintMismatch, crypto.DecapsulationError) as exc:
            _fail(str(exc), EXIT_INTEGRITY)
        except crypto.CryptoError as exc:
            _fail(str(exc), 1)
        except OSError as exc:
            _fail(str(exc), 1)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _client(cfg: ClientConfig) -> ApiClient:
    return ApiClient(cfg.server, token=cfg.token)


def _load_private_key(cfg: ClientConfig) -> crypto.PrivateKey:
    if not cfg.private_key:
        _fail("no private key configured (use --key, DABIH_PRIVATE_KEY or the config file)",
              EXIT_AUTH)
    path = Path(cfg.private_key)
    if not path.exists():
        _fail(f"private key not found: {path}", EXIT_NOT_FOUND)
    mode = stat.S_IMODE(path.stat().st_mode)
    if mode & 0o077:
        click.echo(f"warning: {path} is readable by others (mode {oct(mode)}); "
                   "chmod 600 is recommended", err=True)
    data = path.read_bytes()
    if data.lstrip().startswith(crypto.COMPACT_HEADER.encode()):
        return crypto.import_compact(data.decode())
    key = crypto.import_key(data)
    if not isinstance(key, crypto.PrivateKey):
        _fail(f"{path} holds a public key; a private key is required", 1)
    return key


def _echo(cfg: ClientConfig, message: str) -> None:
    if not cfg.quiet:
        click.echo(message)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Config file (default ~/.config/dabih/config or $DABIH_CONFIG).")
@click.option("--server", default=None, help="Server base URL.")
@click.option("--token", default=None, help="Bearer token (access or upload token).")
@click.option("--key", "private_key", type=click.Path(), default=None,
              help="Private key file (PKCS#8 PEM or compact payload).")
@click.option("--chunk-size", type=int, default=None, help="Chunk size in bytes.")
@click.option("--parallel", type=int, default=None, help="Concurrent chunk transfers.")
@click.option("--quiet", is_flag=True, default=False, help="Suppress progress output.")
@click.pass_context
def main(ctx, config_path, server, token, private_key, chunk_size, parallel, quiet):
    """dabih: encrypted data storage and sharing."""
    ctx.obj = _load_config(config_path, {
        "server": server, "token": token, "private_key": private_key,
        "chunk_size": chunk_size, "parallel": parallel, "quiet": quiet or None,
    })


# ---------------------------------------------------------------------------
# login / keygen / key management
# ---------------------------------------------------------------------------


@main.command()
@click.option("--user-id", required=True)
@click.option("--name", default="")
@click.option("--email", default="")
@click.option("--save/--no-save", default=True, help="Write the token to the config file.")
@click.pass_obj
@_handle_errors
def login(cfg: ClientConfig, user_id, name, email, save):
    """Obtain an access token from the server's local login endpoint."""
    result = _client(cfg).login(user_id, name, email)
    cfg.token = result["token"]
    if save:
        _save_config(cfg)
        _echo(cfg, f"token saved to {cfg.config_path}")
    else:
        click.echo(result["token"])
    user = result["user"]
    _echo(cfg, f"logged in as {user['user_id']}" + (" (admin)" if user["is_admin"] else ""))


@main.command()
@click.option("--out", "out_path", type=click.Path(), default="dabih_key.pem",
              show_default=True, help="Private key output path.")
@click.option("--compact", is_flag=True, help="Also write the QR-ready compact payload.")
@click.option("--enroll", is_flag=True, help="Enroll the public key with the server.")
@click.pass_obj
@_handle_errors
def keygen(cfg: ClientConfig, out_path, compact, enroll):
    """Generate a 4096-bit RSA key pair (PKCS#8 + public PEM)."""
    out = Path(out_path)
    if out.exists():
        _fail(f"{out} already exists; refusing to overwrite a private key", 1)
    key = crypto.PrivateKey.generate()
    out.touch(mode=0o600)
    out.write_bytes(key.pem_pkcs8())
    public_path = out.with_name(out.name + ".pub")
    public_path.write_bytes(key.public.pem())
    _echo(cfg, f"private key: {out}")
    _echo(cfg, f"public key:  {public_path}")
    _echo(cfg, f"fingerprint: {key.fingerprint}")
    if compact:
        compact_path = out.with_name(out.name + ".compact.txt")
        compact_path.touch(mode=0o600)
        compact_path.write_text(crypto.compact_export(key))
        _echo(cfg, f"compact key: {compact_path} ({compact_path.stat().st_size} bytes)")
    if enroll:
        result = _client(cfg).enroll_key(key.public.pem().decode())
        _echo(cfg, f"enrolled (enabled={result['enabled']}); an admin must enable it")


@main.group()
def key():
    """Public key enrollment."""


@key.command("enroll")
@click.argument("public_key_path", type=click.Path(exists=True))
@click.pass_obj
@_handle_errors
def key_enroll(cfg: ClientConfig, public_key_path):
    """Enroll a public key (PEM) with the server."""
    result = _client(cfg).enroll_key(Path(public_key_path).read_text())
    click.echo(f"{result['fingerprint']} enabled={result['enabled']}")


@key.command("list")
@click.pass_obj
@_handle_errors
def key_list(cfg: ClientConfig):
    """List your enrolled keys."""
    for entry in _client(cfg).list_keys():
        click.echo(f"{entry['fingerprint']} enabled={entry['enabled']}")


# ---------------------------------------------------------------------------
# hash
# ---------------------------------------------------------------------------


@main.command("hash")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@_handle_errors
def hash_cmd(cfg: ClientConfig, path):
    """Print the dataset hash of a local file (chunk-wise SHA-256)."""
    click.echo(file_dataset_hash(path, cfg.chunk_size))


# ---------------------------------------------------------------------------
# upload
# ---------------------------------------------------------------------------


def _local_chunk_hashes(path: Path, chunk_size: int) -> list[str]:
    return [hashlib.sha256(piece).hexdigest() for piece in iter_file_chunks(path, chunk_size)]


def _read_chunk(path: Path, index: int, chunk_size: int) -> bytes:
    with open(path, "rb") as f:
        f.seek(index * chunk_size)
        return f.read(chunk_size)


def _transfer_chunks(client: ApiClient, cfg: ClientConfig, path: Path,
                     mnemonic: str, indexes: list[int], label: str) -> None:
    if not indexes:
        return
    errors: list[Exception] = []

    def run(update):
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            futures = {
                pool.submit(client.upload_chunk, mnemonic, index,
                            _read_chunk(path, index, cfg.chunk_size)): index
                for index in indexes
            }
            for future in as_completed(futures):
                try:
                    future.result()
                except Exception as exc:
                    errors.append(exc)
                update(1)

    if cfg.quiet or not sys.stderr.isatty():
        run(lambda n: None)
    else:
        with click.progressbar(length=len(indexes), label=label, file=sys.stderr) as bar:
            run(bar.update)
    if errors:
        raise errors[0]


def _find_resumable(client: ApiClient, path: Path, chunk_size: int,
                    local_hashes: list[str]) -> Optional[dict]:
    """An interrupted upload of this exact content: filename matches, the
    session key is still alive, and every already-uploaded chunk hash equals
    the local data at the same index."""
    for upload in client.incomplete_uploads():
        if upload["filename"] != path.name or not upload.get("resumable"):
            continue
        chunks = upload["chunks"]
        if any(c["index"] >= len(local_hashes) for c in chunks):
            continue
        if all(c["plain_hash"] == local_hashes[c["index"]] for c in chunks):
            return upload
    return None


def _upload_one(client: ApiClient, cfg: ClientConfig, path: Path, force: bool) -> dict:
    size = path.stat().st_size
    if size == 0:
        _fail(f"{path}: empty files cannot be stored", 1)
    local_hashes = _local_chunk_hashes(path, cfg.chunk_size)
    local_hash = crypto.dataset_hash([bytes.fromhex(h) for h in local_hashes]).hex()
    total = len(local_hashes)

    resumable = _find_resumable(client, path, cfg.chunk_size, local_hashes)
    if resumable is not None:
        mnemonic = resumable["mnemonic"]
        have = {c["index"] for c in resumable["chunks"]}
        todo = [i for i in range(total) if i not in have]
        _echo(cfg, f"{path}: resuming {mnemonic} "
                   f"({len(have)}/{total} chunks already uploaded)")
        _transfer_chunks(client, cfg, path, mnemonic, todo, f"resume {path.name}")
        result = client.finish_upload(mnemonic)
        status = "resumed"
    else:
        start = client.start_upload(path.name, size, first_chunk_hash=local_hashes[0])
        mnemonic = start["mnemonic"]
        hint = start.get("duplicate_hint")
        if hint and local_hash == hint["dataset_hash"]:
            if not force:
                client.cancel_upload(mnemonic)
                _echo(cfg, f"{path}: duplicate of {hint['mnemonic']}, skipped "
                           "(use --force to upload anyway)")
                return {"status": "duplicate", "mnemonic": hint["mnemonic"],
                        "dataset_hash": hint["dataset_hash"]}
            _echo(cfg, f"{path}: duplicate of {hint['mnemonic']}, uploading anyway")
        _transfer_chunks(client, cfg, path, mnemonic, list(range(total)), f"upload {path.name}")
        result = client.finish_upload(mnemonic)
        status = "uploaded"

    if result["dataset_hash"] != local_hash:
        _fail(f"{path}: server dataset hash {result['dataset_hash']} does not match "
              f"local {local_hash}", EXIT_INTEGRITY)
    return {"status": status, **result}


def _zip_directory(directory: Path) -> Path:
    """Deterministic archive: path-sorted entries, fixed timestamps, so the
    same directory contents dedupe across re-runs."""
    handle = tempfile.NamedTemporaryFile(suffix=".zip", delete=False)
    handle.close()
    archive = Path(handle.name)
    entries = sorted(p for p in directory.rglob("*") if p.is_file())
    with zipfile.ZipFile(archive, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for entry in entries:
            info = zipfile.ZipInfo(str(entry.relative_to(directory)), date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, entry.read_bytes())
    return archive


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--recursive", "-r", is_flag=True, help="Walk directories and upload every file.")
@click.option("--zip", "zip_dirs", is_flag=True, help="Zip each directory and upload the archive.")
@click.option("--force", is_flag=True, help="Upload even if the server already has this content.")
@click.pass_obj
@_handle_errors
def upload(cfg: ClientConfig, paths, recursive, zip_dirs, force):
    """Upload files (or directories with --recursive / --zip)."""
    client = _client(cfg)
    results = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            if zip_dirs:
                archive = _zip_directory(path)
                renamed = archive.with_name(path.name + ".zip")
                os.replace(archive, renamed)
                try:
                    results.append((renamed.name, _upload_one(client, cfg, renamed, force)))
                finally:
                    renamed.unlink(missing_ok=True)
            elif recursive:
                for file_path in sorted(p for p in path.rglob("*") if p.is_file()):
                    results.append((str(file_path), _upload_one(client, cfg, file_path, force)))
            else:
                _fail(f"{path} is a directory (use --recursive or --zip)", 1)
        else:
            results.append((str(path), _upload_one(client, cfg, path, force)))
    for name, result in results:
        if result["status"] == "duplicate":
            click.echo(f"{name}: duplicate -> {result['mnemonic']}")
        else:
            click.echo(f"{name}: {result['mnemonic']} {result['dataset_hash']}")


# ---------------------------------------------------------------------------
# download
# ---------------------------------------------------------------------------


def _decapsulated_key(client: ApiClient, cfg: ClientConfig, mnemonic: str) -> crypto.DatasetKey:
    private = _load_private_key(cfg)
    return crypto.decapsulate(private, client.envelope(mnemonic))


@main.command()
@click.argument("mnemonic")
@click.option("--out", "-o", "out_path", type=click.Path(), default=None,
              help="Output file (default: the stored filename).")
@click.option("--server-side", is_flag=True,
              help="Send the key to the server and let it decrypt (offloads CPU).")
@click.pass_obj
@_handle_errors
def download(cfg: ClientConfig, mnemonic, out_path, server_side):
    """Download a dataset and decrypt it (locally unless --server-side)."""
    client = _client(cfg)
    info = client.dataset(mnemonic)
    out = Path(out_path) if out_path else Path(info["filename"])
    chunks = info["chunks"]
    key = _decapsulated_key(client, cfg, mnemonic)

    if server_side:
        expected = [(c["plain_size"], c["plain_hash"]) for c in chunks]
        with open(out, "wb") as f:
            buffer = b""
            queue = list(expected)
            for piece in client.server_download(mnemonic, key):
                buffer += piece
                while queue and len(buffer) >= queue[0][0]:
                    size, plain_hash = queue.pop(0)
                    block, buffer = buffer[:size], buffer[size:]
                    if hashlib.sha256(block).hexdigest() != plain_hash:
                        index = len(expected) - len(queue) - 1
                        _fail(f"chunk {index}: hash mismatch in server stream", EXIT_INTEGRITY)
                    f.write(block)
            if buffer or queue:
                _fail("server stream was truncated", EXIT_INTEGRITY)
    else:
        sealed_chunks: dict[int, crypto.SealedChunk] = {}
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            futures = {pool.submit(client.download_chunk, mnemonic, c["index"]): c["index"]
                       for c in chunks}
            for future in as_completed(futures):
                sealed = future.result()
                sealed_chunks[sealed.index] = sealed
        with open(out, "wb") as f:
            for c in chunks:  # verification strictly ordered by index
                sealed = sealed_chunks[c["index"]]
                try:
                    f.write(crypto.open_chunk(key, sealed))
                except crypto.CryptoError as exc:
                    out.unlink(missing_ok=True)
                    _fail(f"integrity failure: {exc}", EXIT_INTEGRITY)
    key.zeroize()
    _echo(cfg, f"{mnemonic} -> {out} ({out.stat().st_size} bytes)")


# ---------------------------------------------------------------------------
# share / reencrypt / datasets
# ---------------------------------------------------------------------------


@main.command()
@click.argument("mnemonic")
@click.option("--to", "user_id", required=True, help="Recipient user id.")
@click.option("--permission", type=click.Choice(["read", "write"]), default="read",
              show_default=True)
@click.pass_obj
@_handle_errors
def share(cfg: ClientConfig, mnemonic, user_id, permission):
    """Grant a user access: decapsulate the key locally and re-submit it."""
    client = _client(cfg)
    key = _decapsulated_key(client, cfg, mnemonic)
    try:
        result = client.share(mnemonic, key, user_id, permission)
    finally:
        key.zeroize()
    click.echo(f"shared {mnemonic} with {result['user_id']} ({result['permission']})")


@main.command()
@click.argument("mnemonic")
@click.pass_obj
@_handle_errors
def reencrypt(cfg: ClientConfig, mnemonic):
    """Rotate the dataset key (all members keep access via fresh envelopes)."""
    client = _client(cfg)
    key = _decapsulated_key(client, cfg, mnemonic)
    try:
        new_fingerprint = client.reencrypt(mnemonic, key)
    finally:
        key.zeroize()
    # verify the post-state: our fresh envelope must carry the new key
    envelope = client.envelope(mnemonic)
    if envelope.key_fingerprint != new_fingerprint:
        _fail("re-encryption reported success but the envelope fingerprint does not match",
              EXIT_INTEGRITY)
    fresh = crypto.decapsulate(_load_private_key(cfg), envelope)
    ok = fresh.fingerprint() == new_fingerprint
    fresh.zeroize()
    if not ok:
        _fail("re-encrypted envelope does not decapsulate to the new key", EXIT_INTEGRITY)
    click.echo(new_fingerprint)


@main.command()
@click.pass_obj
@_handle_errors
def datasets(cfg: ClientConfig):
    """List datasets you own or can access."""
    for entry in _client(cfg).datasets():
        click.echo(f"{entry['mnemonic']}  {entry['permission']:<5}  "
                   f"{entry['size']:>12}  {entry['filename']}")


@main.command()
@click.argument("mnemonic")
@click.pass_obj
@_handle_errors
def delete(cfg: ClientConfig, mnemonic):
    """Delete a dataset (write permission required)."""
    _client(cfg).delete_dataset(mnemonic)
    click.echo(f"deleted {mnemonic}")


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------


@main.group()
def token():
    """Upload tokens for keyless data ingestion."""


@token.command("create")
@click.option("--ttl-days", type=int, default=None, help="Expiry (server default: 30 days).")
@click.pass_obj
@_handle_errors
def token_create(cfg: ClientConfig, ttl_days):
    """Create an upload-scoped token to hand to a data provider."""
    result = _client(cfg).create_token(ttl_days)
    click.echo(result["token"])
    _echo(cfg, f"expires: {result['expires_at']}")


@token.command("revoke")
@click.argument("token_value")
@click.pass_obj
@_handle_errors
def token_revoke(cfg: ClientConfig, token_value):
    """Revoke an upload token."""
    _client(cfg).revoke_token(token_value)
    _echo(cfg, "revoked")


@token.command("list")
@click.pass_obj
@_handle_errors
def token_list(cfg: ClientConfig):
    """List your upload tokens."""
    for entry in _client(cfg).list_tokens():
        click.echo(f"{entry['token']}  expires {entry['expires_at']}")


# ---------------------------------------------------------------------------
# offline recovery
# ---------------------------------------------------------------------------


@main.command()
@click.argument("recovery_json", type=click.Path(exists=True, dir_okay=False))
@click.argument("chunks_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("root_key_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path())
@_handle_errors
def recover(recovery_json, chunks_dir, root_key_path, out_path):
    """Decrypt a dataset offline from its recovery file and a root key.

    Needs no server and no database: RECOVERY_JSON and the chunk files from
    the storage backend plus the private half of a configured root key.
    """
    recovery = RecoveryFile.from_json(Path(recovery_json).read_text("utf-8"))
    raw = Path(root_key_path).read_bytes()
    if raw.lstrip().startswith(crypto.COMPACT_HEADER.encode()):
        private = crypto.import_compact(raw.decode())
    else:
        loaded = crypto.import_key(raw)
        if not isinstance(loaded, crypto.PrivateKey):
            _fail(f"{root_key_path} holds a public key; the private root key is required", 1)
        private = loaded

    matching = [e for e in recovery.root_envelopes if e.fingerprint == private.fingerprint]
    if not matching:
        available = ", ".join(e.fingerprint[:12] + "…" for e in recovery.root_envelopes)
        _fail(f"no matching root envelope for key {private.fingerprint[:12]}… "
              f"(recovery file has: {available})", EXIT_NOT_FOUND)
    envelope = crypto.KeyEnvelope(
        recipient_fingerprint=matching[0].fingerprint,
        ciphertext=base64.b64decode(matching[0].ciphertext),
        key_fingerprint=None)
    key = crypto.decapsulate(private, envelope)

    chunks = sorted(recovery.chunks, key=lambda c: c.index)
    plain_digests = []
    with open(out_path, "wb") as f:
        for chunk in chunks:
            path = Path(chunks_dir) / f"chunk_{chunk.index}"
            if not path.exists():
                _fail(f"chunk file missing: {path}", EXIT_NOT_FOUND)
            sealed = crypto.SealedChunk(
                index=chunk.index,
                iv=bytes.fromhex(chunk.iv),
                ciphertext=path.read_bytes(),
                plain_hash=bytes.fromhex(chunk.plain_hash),
                crc32=int(chunk.crc32, 16),
                plain_size=chunk.plain_size)
            f.write(crypto.open_chunk(key, sealed))
            plain_digests.append(sealed.plain_hash)
    key.zeroize()
    if crypto.dataset_hash(plain_digests).hex() != recovery.dataset_hash:
        _fail("recovered data does not match the recovery file's dataset hash",
              EXIT_INTEGRITY)
    click.echo(f"recovered {recovery.mnemonic} -> {out_path}")


# ---------------------------------------------------------------------------
# admin
# ---------------------------------------------------------------------------


@main.group()
def admin():
    """Administrative operations (admin account required)."""


@admin.command("enable-key")
@click.argument("fingerprint")
@click.pass_obj
@_handle_errors
def admin_enable_key(cfg: ClientConfig, fingerprint):
    """Enable an enrolled public key."""
    result = _client(cfg).enable_key(fingerprint)
    click.echo(f"{result['fingerprint']} enabled={result['enabled']}")


@admin.command("users")
@click.pass_obj
@_handle_errors
def admin_users(cfg: ClientConfig):
    """List all users and their keys."""
    for user in _client(cfg).admin_users():
        flags = " admin" if user["is_admin"] else ""
        click.echo(f"{user['user_id']}{flags}")
        for entry in user["keys"]:
            click.echo(f"  {entry['fingerprint']} enabled={entry['enabled']}")


@admin.command("events")
@click.option("--limit", type=int, default=100, show_default=True)
@click.pass_obj
@_handle_errors
def admin_events(cfg: ClientConfig, limit):
    """Show the activity log."""
    for event in _client(cfg).admin_events()[:limit]:
        mnemonic = event["mnemonic"] or "-"
        click.echo(f"{event['timestamp']}  {event['actor']:<12} {event['action']:<18} "
                   f"{mnemonic:<24} {event['detail']}")


if __name__ == "__main__":
    main()
