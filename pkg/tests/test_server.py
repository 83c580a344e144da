import hashlib
import secrets

import pytest
from fastapi.testclient import TestClient

from dabih import crypto
from dabih.config import ServerConfig
from dabih.server import create_app


CHUNK = 1024  # small chunk size keeps multi-chunk tests cheap


class Harness:
    """TestClient wrapper with the common enrollment/upload choreography."""

    def __init__(self, client: TestClient, state):
        self.client = client
        self.state = state
        self.tokens: dict[str, str] = {}

    def login(self, user_id: str, name: str = "", email: str = "") -> str:
        r = self.client.post("/api/v1/auth/login",
                             json={"user_id": user_id, "name": name, "email": email})
        assert r.status_code == 200, r.text
        token = r.json()["token"]
        self.tokens[user_id] = token
        return token

    def auth(self, user_id: str) -> dict:
        return {"Authorization": f"Bearer {self.tokens[user_id]}"}

    def bearer(self, token: str) -> dict:
        return {"Authorization": f"Bearer {token}"}

    def enroll_key(self, user_id: str, key: crypto.PrivateKey, *, enable_by: str = "admin") -> str:
        r = self.client.post("/api/v1/keys", json={"pem": key.public.pem().decode()},
                             headers=self.auth(user_id))
        assert r.status_code == 201, r.text
        fingerprint = r.json()["fingerprint"]
        if enable_by:
            r = self.client.post(f"/api/v1/keys/{fingerprint}/enable",
                                 headers=self.auth(enable_by))
            assert r.status_code == 200, r.text
        return fingerprint

    def upload(self, user_id: str, data: bytes, filename: str = "data.bin",
               chunk_size: int = CHUNK, token: str | None = None,
               first_chunk_hash: str | None = None) -> dict:
        headers = self.bearer(token) if token else self.auth(user_id)
        r = self.client.post("/api/v1/upload", headers=headers, json={
            "filename": filename, "size": len(data),
            "first_chunk_hash": first_chunk_hash,
        })
        assert r.status_code == 201, r.text
        start = r.json()
        mnemonic = start["mnemonic"]
        for index in range(0, max(1, (len(data) + chunk_size - 1) // chunk_size)):
            piece = data[index * chunk_size:(index + 1) * chunk_size]
            r = self.client.put(
                f"/api/v1/upload/{mnemonic}/chunk/{index}",
                headers={**headers, "x-chunk-hash": hashlib.sha256(piece).hexdigest()},
                content=piece)
            assert r.status_code == 200, r.text
        r = self.client.post(f"/api/v1/upload/{mnemonic}/finish", headers=headers)
        assert r.status_code == 200, r.text
        return {**start, **r.json()}

    def download(self, user_id: str, mnemonic: str, private: crypto.PrivateKey) -> bytes:
        r = self.client.get(f"/api/v1/datasets/{mnemonic}/envelope", headers=self.auth(user_id))
        assert r.status_code == 200, r.text
        env = r.json()
        envelope = crypto.KeyEnvelope.from_b64(
            env["recipient_fingerprint"], env["ciphertext"], env["key_fingerprint"])
        key = crypto.decapsulate(private, envelope)
        r = self.client.get(f"/api/v1/datasets/{mnemonic}", headers=self.auth(user_id))
        assert r.status_code == 200, r.text
        out = b""
        for chunk in r.json()["chunks"]:
            c = self.client.get(f"/api/v1/datasets/{mnemonic}/chunk/{chunk['index']}",
                                headers=self.auth(user_id))
            assert c.status_code == 200
            sealed = crypto.SealedChunk(
                index=chunk["index"],
                iv=bytes.fromhex(c.headers["x-chunk-iv"]),
                ciphertext=c.content,
                plain_hash=bytes.fromhex(c.headers["x-chunk-hash"]),
                crc32=int(c.headers["x-chunk-crc32"], 16),
                plain_size=int(c.headers["x-chunk-plain-size"]))
            out += crypto.open_chunk(key, sealed)
        return out

    def dataset_key(self, user_id: str, mnemonic: str, private: crypto.PrivateKey) -> crypto.DatasetKey:
        r = self.client.get(f"/api/v1/datasets/{mnemonic}/envelope", headers=self.auth(user_id))
        assert r.status_code == 200, r.text
        env = r.json()
        return crypto.decapsulate(private, crypto.KeyEnvelope.from_b64(
            env["recipient_fingerprint"], env["ciphertext"], env["key_fingerprint"]))


@pytest.fixture()
def harness(tmp_path, rsa_key, rsa_key_b, root_key):
    root_pem = tmp_path / "root.pub.pem"
    root_pem.write_bytes(root_key.public.pem())
    config = ServerConfig(
        storage_root=str(tmp_path / "storage"),
        db_path=str(tmp_path / "dabih.db"),
        root_key_paths=[str(root_pem)],
        admins=["admin"],
        chunk_size=CHUNK,
    )
    app = create_app(config)
    with TestClient(app) as client:
        h = Harness(client, app.state.dabih)
        h.login("admin", "Admin")
        h.login("alice", "Alice")
        h.login("bob", "Bob")
        h.enroll_key("alice", rsa_key)
        h.enroll_key("bob", rsa_key_b)
        yield h
    app.state.dabih.close()


def test_custom_word_lists_via_config(tmp_path):
    (tmp_path / "adj.txt").write_text("gleaming\n")
    (tmp_path / "names.txt").write_text("zora\n")
    config = ServerConfig(
        storage_root=str(tmp_path / "storage"),
        db_path=str(tmp_path / "dabih.db"),
        adjectives_path=str(tmp_path / "adj.txt"),
        names_path=str(tmp_path / "names.txt"),
    )
    app = create_app(config)
    state = app.state.dabih
    assert state.words.adjectives == ("gleaming",)
    assert state.words.names == ("zora",)
    state.close()


class TestAuthAndKeys:
    def test_login_issues_token_and_me_works(self, harness):
        r = harness.client.get("/api/v1/auth/me", headers=harness.auth("alice"))
        assert r.status_code == 200
        assert r.json()["user_id"] == "alice"
        assert not r.json()["is_admin"]

    def test_admin_flag_from_config(self, harness):
        r = harness.client.get("/api/v1/auth/me", headers=harness.auth("admin"))
        assert r.json()["is_admin"]

    def test_no_token_unauthorized(self, harness):
        r = harness.client.get("/api/v1/auth/me")
        assert r.status_code == 401
        assert r.json()["code"] == "unauthorized"

    def test_new_key_is_disabled_until_admin_enables(self, harness):
        harness.login("carol")
        key = crypto.PrivateKey.generate()
        r = harness.client.post("/api/v1/keys", json={"pem": key.public.pem().decode()},
                                headers=harness.auth("carol"))
        assert r.status_code == 201
        assert r.json()["enabled"] is False
        fingerprint = r.json()["fingerprint"]
        # carol cannot upload yet
        r = harness.client.post("/api/v1/upload", headers=harness.auth("carol"),
                                json={"filename": "x"})
        assert r.status_code == 409
        assert r.json()["code"] == "no_enabled_key"
        # non-admin cannot enable
        r = harness.client.post(f"/api/v1/keys/{fingerprint}/enable",
                                headers=harness.auth("carol"))
        assert r.status_code == 403
        # admin enables
        r = harness.client.post(f"/api/v1/keys/{fingerprint}/enable",
                                headers=harness.auth("admin"))
        assert r.status_code == 200 and r.json()["enabled"]

    def test_duplicate_key_rejected(self, harness, rsa_key):
        r = harness.client.post("/api/v1/keys", json={"pem": rsa_key.public.pem().decode()},
                                headers=harness.auth("bob"))
        assert r.status_code == 409
        assert r.json()["code"] == "duplicate"

    def test_small_key_rejected(self, harness):
        from cryptography.hazmat.primitives.asymmetric import rsa as _rsa
        from cryptography.hazmat.primitives import serialization

        small = _rsa.generate_private_key(public_exponent=65537, key_size=2048)
        pem = small.public_key().public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)
        r = harness.client.post("/api/v1/keys", json={"pem": pem.decode()},
                                headers=harness.auth("alice"))
        assert r.status_code == 400
        assert r.json()["code"] == "key_too_small"

    def test_private_key_submission_rejected(self, harness):
        key = crypto.PrivateKey.generate()
        r = harness.client.post("/api/v1/keys", json={"pem": key.pem_pkcs8().decode()},
                                headers=harness.auth("alice"))
        assert r.status_code == 400
        assert r.json()["code"] == "private_key_submitted"


class TestUpload:
    def test_roundtrip_multichunk(self, harness, rsa_key):
        data = secrets.token_bytes(CHUNK * 3 + 17)
        done = harness.upload("alice", data)
        assert harness.download("alice", done["mnemonic"], rsa_key) == data

    def test_dataset_hash_matches_definition(self, harness):
        data = secrets.token_bytes(CHUNK * 2 + 5)
        pieces = [data[i:i + CHUNK] for i in range(0, len(data), CHUNK)]
        expected = hashlib.sha256(
            b"".join(hashlib.sha256(p).digest() for p in pieces)).hexdigest()
        done = harness.upload("alice", data)
        assert done["dataset_hash"] == expected

    def test_wrong_chunk_hash_rejected_nothing_stored(self, harness):
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "x.bin"})
        mnemonic = r.json()["mnemonic"]
        r = harness.client.put(
            f"/api/v1/upload/{mnemonic}/chunk/0",
            headers={**harness.auth("alice"), "x-chunk-hash": "00" * 32},
            content=b"not matching")
        assert r.status_code == 400
        assert r.json()["code"] == "hash_mismatch"
        assert not harness.state.storage.has_chunk(mnemonic, 0)

    def test_chunk_size_limit(self, harness):
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "x.bin"})
        mnemonic = r.json()["mnemonic"]
        exact = b"x" * CHUNK
        r = harness.client.put(
            f"/api/v1/upload/{mnemonic}/chunk/0",
            headers={**harness.auth("alice"),
                     "x-chunk-hash": hashlib.sha256(exact).hexdigest()},
            content=exact)
        assert r.status_code == 200
        over = b"x" * (CHUNK + 1)
        r = harness.client.put(
            f"/api/v1/upload/{mnemonic}/chunk/1",
            headers={**harness.auth("alice"),
                     "x-chunk-hash": hashlib.sha256(over).hexdigest()},
            content=over)
        assert r.status_code == 413
        assert r.json()["code"] == "size_over_limit"

    def test_chunk_receipt_crc_matches_stored_ciphertext(self, harness):
        import zlib
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "x.bin"})
        mnemonic = r.json()["mnemonic"]
        piece = secrets.token_bytes(100)
        r = harness.client.put(
            f"/api/v1/upload/{mnemonic}/chunk/0",
            headers={**harness.auth("alice"),
                     "x-chunk-hash": hashlib.sha256(piece).hexdigest()},
            content=piece)
        stored = harness.state.storage.get_chunk(mnemonic, 0)
        assert r.json()["crc32"] == f"{zlib.crc32(stored):08x}"

    def test_duplicate_chunk_index_rejected(self, harness):
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "x.bin"})
        mnemonic = r.json()["mnemonic"]
        piece = b"only once"
        headers = {**harness.auth("alice"),
                   "x-chunk-hash": hashlib.sha256(piece).hexdigest()}
        assert harness.client.put(f"/api/v1/upload/{mnemonic}/chunk/0",
                                  headers=headers, content=piece).status_code == 200
        r = harness.client.put(f"/api/v1/upload/{mnemonic}/chunk/0",
                               headers=headers, content=piece)
        assert r.status_code == 409

    def test_finish_reports_missing_chunks(self, harness):
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "x.bin"})
        mnemonic = r.json()["mnemonic"]
        for index in (0, 1, 2, 4):  # gap at 3
            piece = bytes([index]) * 10
            harness.client.put(
                f"/api/v1/upload/{mnemonic}/chunk/{index}",
                headers={**harness.auth("alice"),
                         "x-chunk-hash": hashlib.sha256(piece).hexdigest()},
                content=piece)
        r = harness.client.post(f"/api/v1/upload/{mnemonic}/finish",
                                headers=harness.auth("alice"))
        assert r.status_code == 409
        assert r.json()["code"] == "missing_chunks"
        assert r.json()["detail"]["missing"] == [3]

    def test_envelope_count_is_one_plus_root_keys(self, harness):
        done = harness.upload("alice", b"some data")
        envelopes = harness.state.db.envelopes(done["mnemonic"])
        assert len(envelopes) == 2  # alice + 1 root key
        fps = {e.recipient_fingerprint for e in envelopes}
        assert harness.state.db.enabled_key_for("alice").fingerprint in fps

    def test_recovery_file_written(self, harness, root_key):
        data = secrets.token_bytes(CHUNK + 7)
        done = harness.upload("alice", data)
        recovery = harness.state.storage.read_recovery(done["mnemonic"])
        assert recovery.dataset_hash == done["dataset_hash"]
        assert len(recovery.chunks) == 2
        assert [e.fingerprint for e in recovery.root_envelopes] == [root_key.fingerprint]

    def test_duplicate_hint(self, harness):
        data = secrets.token_bytes(CHUNK * 2)
        first_hash = hashlib.sha256(data[:CHUNK]).hexdigest()
        done = harness.upload("alice", data, first_chunk_hash=first_hash)
        assert done["duplicate_hint"] is None
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "again.bin", "first_chunk_hash": first_hash})
        hint = r.json()["duplicate_hint"]
        assert hint["dataset_hash"] == done["dataset_hash"]
        # other users never see it
        r = harness.client.post("/api/v1/upload", headers=harness.auth("bob"),
                                json={"filename": "again.bin", "first_chunk_hash": first_hash})
        assert r.json()["duplicate_hint"] is None

    def test_incomplete_listing_and_cancel(self, harness):
        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "partial.bin"})
        mnemonic = r.json()["mnemonic"]
        for index in range(2):
            piece = bytes([index]) * 50
            harness.client.put(
                f"/api/v1/upload/{mnemonic}/chunk/{index}",
                headers={**harness.auth("alice"),
                         "x-chunk-hash": hashlib.sha256(piece).hexdigest()},
                content=piece)
        r = harness.client.get("/api/v1/upload/incomplete", headers=harness.auth("alice"))
        uploads = r.json()["uploads"]
        assert len(uploads) == 1
        assert uploads[0]["mnemonic"] == mnemonic
        assert len(uploads[0]["chunks"]) == 2
        assert uploads[0]["resumable"] is True
        # invisible to others
        r = harness.client.get("/api/v1/upload/incomplete", headers=harness.auth("bob"))
        assert r.json()["uploads"] == []
        # cancel cleans up
        r = harness.client.delete(f"/api/v1/upload/{mnemonic}", headers=harness.auth("alice"))
        assert r.status_code == 204
        assert not harness.state.storage.has_chunk(mnemonic, 0)
        r = harness.client.get("/api/v1/upload/incomplete", headers=harness.auth("alice"))
        assert r.json()["uploads"] == []

    def test_session_key_zeroized_after_finish(self, harness):
        done = harness.upload("alice", b"watch the key")
        assert harness.state.sessions.get(done["mnemonic"]) is None

    def test_idle_session_evicted_and_key_zeroized(self, harness):
        from datetime import timedelta

        r = harness.client.post("/api/v1/upload", headers=harness.auth("alice"),
                                json={"filename": "stale.bin"})
        mnemonic = r.json()["mnemonic"]
        session = harness.state.sessions.get(mnemonic)
        assert session is not None
        key = session.key
        harness.state.sessions.evict_idle(timedelta(seconds=-1))
        assert harness.state.sessions.get(mnemonic) is None
        assert key.bytes == b"\x00" * 32
        # the upload is listed but no longer resumable; chunks now 409
        r = harness.client.get("/api/v1/upload/incomplete", headers=harness.auth("alice"))
        entry = [u for u in r.json()["uploads"] if u["mnemonic"] == mnemonic]
        assert entry and entry[0]["resumable"] is False
        piece = b"too late"
        r = harness.client.put(
            f"/api/v1/upload/{mnemonic}/chunk/0",
            headers={**harness.auth("alice"),
                     "x-chunk-hash": hashlib.sha256(piece).hexdigest()},
            content=piece)
        assert r.status_code == 409
        assert r.json()["code"] == "session_expired"
        # cancel still works so the client can restart cheaply
        r = harness.client.delete(f"/api/v1/upload/{mnemonic}", headers=harness.auth("alice"))
        assert r.status_code == 204


class TestDataAtRest:
    def test_no_plaintext_in_durable_state(self, harness, tmp_path):
        sentinel = b"SENTINEL-7f3a9c-NEVER-AT-REST"
        data = sentinel * 200
        harness.upload("alice", data)
        for path in sorted(tmp_path.rglob("*")):
            if path.is_file():
                assert sentinel not in path.read_bytes(), f"plaintext sentinel found in {path}"


class TestSharingAndDownload:
    def test_share_and_recipient_downloads(self, harness, rsa_key, rsa_key_b):
        import base64
        data = secrets.token_bytes(CHUNK + 100)
        done = harness.upload("alice", data)
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        assert r.status_code == 201, r.text
        assert harness.download("bob", done["mnemonic"], rsa_key_b) == data

    def test_share_fingerprint_gate(self, harness, rsa_key):
        import base64
        done = harness.upload("alice", b"guarded")
        wrong = crypto.generate_dataset_key()
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(wrong.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        assert r.status_code == 409
        assert r.json()["code"] == "fingerprint_mismatch"
        # bob did not become a member
        assert harness.state.db.permission_for(done["mnemonic"], "bob") is None

    def test_read_member_cannot_share(self, harness, rsa_key, rsa_key_b):
        import base64
        done = harness.upload("alice", b"read only for bob")
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        harness.login("carol")
        bob_key = harness.dataset_key("bob", done["mnemonic"], rsa_key_b)
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share",
            headers=harness.auth("bob"),
            json={"key": base64.b64encode(bob_key.bytes).decode(),
                  "user_id": "carol", "permission": "read"})
        assert r.status_code == 403

    def test_non_member_forbidden(self, harness):
        done = harness.upload("alice", b"private")
        r = harness.client.get(f"/api/v1/datasets/{done['mnemonic']}/envelope",
                               headers=harness.auth("bob"))
        assert r.status_code == 403
        r = harness.client.get(f"/api/v1/datasets/{done['mnemonic']}/chunk/0",
                               headers=harness.auth("bob"))
        assert r.status_code == 403

    def test_share_to_keyless_recipient(self, harness, rsa_key):
        import base64
        harness.login("dave")  # never enrolled a key
        done = harness.upload("alice", b"data")
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode(),
                  "user_id": "dave", "permission": "read"})
        assert r.status_code == 409
        assert r.json()["code"] == "recipient_keyless"

    def test_server_side_download(self, harness, rsa_key):
        import base64
        data = secrets.token_bytes(CHUNK * 2 + 31)
        done = harness.upload("alice", data, filename="stream.bin")
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/download",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode()})
        assert r.status_code == 200
        assert r.content == data
        assert "stream.bin" in r.headers["content-disposition"]

    def test_server_side_download_wrong_key(self, harness):
        import base64
        done = harness.upload("alice", b"no data for wrong keys")
        wrong = crypto.generate_dataset_key()
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/download",
            headers=harness.auth("alice"),
            json={"key": base64.b64encode(wrong.bytes).decode()})
        assert r.status_code == 409
        assert r.json()["code"] == "fingerprint_mismatch"

    def test_delete_dataset(self, harness):
        done = harness.upload("alice", b"to be deleted")
        r = harness.client.delete(f"/api/v1/datasets/{done['mnemonic']}",
                                  headers=harness.auth("bob"))
        assert r.status_code == 403
        r = harness.client.delete(f"/api/v1/datasets/{done['mnemonic']}",
                                  headers=harness.auth("alice"))
        assert r.status_code == 204
        r = harness.client.get(f"/api/v1/datasets/{done['mnemonic']}",
                               headers=harness.auth("alice"))
        assert r.status_code == 404
        assert not harness.state.storage.has_chunk(done["mnemonic"], 0)

    def test_admin_can_delete_but_not_decrypt(self, harness):
        done = harness.upload("alice", b"admin hands off")
        r = harness.client.get(f"/api/v1/datasets/{done['mnemonic']}/envelope",
                               headers=harness.auth("admin"))
        assert r.status_code == 403
        r = harness.client.delete(f"/api/v1/datasets/{done['mnemonic']}",
                                  headers=harness.auth("admin"))
        assert r.status_code == 204


class TestReencrypt:
    def test_rotation_preserves_access_and_hash(self, harness, rsa_key, rsa_key_b):
        import base64
        data = secrets.token_bytes(CHUNK * 2 + 9)
        done = harness.upload("alice", data)
        mnemonic = done["mnemonic"]
        old_key = harness.dataset_key("alice", mnemonic, rsa_key)
        harness.client.post(
            f"/api/v1/datasets/{mnemonic}/share", headers=harness.auth("alice"),
            json={"key": base64.b64encode(old_key.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        old_ivs = [c.iv for c in harness.state.db.chunk_rows(mnemonic)]
        r = harness.client.post(
            f"/api/v1/datasets/{mnemonic}/reencrypt", headers=harness.auth("alice"),
            json={"key": base64.b64encode(old_key.bytes).decode()})
        assert r.status_code == 200, r.text
        new_fp = r.json()["key_fingerprint"]
        assert new_fp != old_key.fingerprint()
        # old key fails on every chunk now
        for row in harness.state.db.chunk_rows(mnemonic):
            ciphertext = harness.state.storage.get_chunk(mnemonic, row.index)
            sealed = crypto.SealedChunk(
                index=row.index, iv=bytes.fromhex(row.iv), ciphertext=ciphertext,
                plain_hash=bytes.fromhex(row.plain_hash), crc32=int(row.crc32, 16),
                plain_size=row.plain_size)
            with pytest.raises(crypto.CryptoError):
                crypto.open_chunk(old_key, sealed)
        # both members still download with no client-side change
        assert harness.download("alice", mnemonic, rsa_key) == data
        assert harness.download("bob", mnemonic, rsa_key_b) == data
        # dataset hash unchanged, IVs fresh
        r = harness.client.get(f"/api/v1/datasets/{mnemonic}", headers=harness.auth("alice"))
        assert r.json()["dataset_hash"] == done["dataset_hash"]
        new_ivs = [c.iv for c in harness.state.db.chunk_rows(mnemonic)]
        assert set(new_ivs).isdisjoint(old_ivs)

    def test_reencrypt_requires_write(self, harness, rsa_key, rsa_key_b):
        import base64
        done = harness.upload("alice", b"rotate me")
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share", headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        bob_key = harness.dataset_key("bob", done["mnemonic"], rsa_key_b)
        r = harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/reencrypt", headers=harness.auth("bob"),
            json={"key": base64.b64encode(bob_key.bytes).decode()})
        assert r.status_code == 403

    def test_reencrypt_storage_failure_rolls_back(self, harness, rsa_key, monkeypatch):
        import base64
        data = secrets.token_bytes(CHUNK + 40)
        done = harness.upload("alice", data)
        mnemonic = done["mnemonic"]
        key = harness.dataset_key("alice", mnemonic, rsa_key)

        calls = {"n": 0}
        original = harness.state.storage.stage_chunk

        def failing(mn, index, ciphertext):
            calls["n"] += 1
            if calls["n"] >= 2:
                raise OSError("disk full")
            return original(mn, index, ciphertext)

        monkeypatch.setattr(harness.state.storage, "stage_chunk", failing)
        r = harness.client.post(
            f"/api/v1/datasets/{mnemonic}/reencrypt", headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode()})
        assert r.status_code == 500
        monkeypatch.undo()
        # old key and chunks remain fully valid
        assert harness.download("alice", mnemonic, rsa_key) == data
        assert harness.state.db.dataset_key_fingerprint(mnemonic) == key.fingerprint()


class TestUploadTokens:
    def test_token_upload_encrypts_to_owner(self, harness, rsa_key):
        r = harness.client.post("/api/v1/tokens", headers=harness.auth("alice"), json={})
        assert r.status_code == 201
        token = r.json()["token"]
        data = secrets.token_bytes(CHUNK + 3)
        done = harness.upload("alice", data, token=token, filename="ingest.bin")
        # alice owns and can decrypt it
        assert harness.download("alice", done["mnemonic"], rsa_key) == data
        envelopes = harness.state.db.envelopes(done["mnemonic"])
        fps = {e.recipient_fingerprint for e in envelopes}
        assert harness.state.db.enabled_key_for("alice").fingerprint in fps

    def test_token_scope_blocks_non_upload_endpoints(self, harness):
        done = harness.upload("alice", b"scoped")
        token = harness.client.post("/api/v1/tokens", headers=harness.auth("alice"),
                                    json={}).json()["token"]
        for method, path in [
            ("GET", "/api/v1/datasets"),
            ("GET", f"/api/v1/datasets/{done['mnemonic']}/envelope"),
            ("POST", f"/api/v1/datasets/{done['mnemonic']}/share"),
            ("GET", "/api/v1/admin/events"),
            ("POST", "/api/v1/tokens"),
        ]:
            r = harness.client.request(method, path, headers=harness.bearer(token),
                                       json={} if method == "POST" else None)
            assert r.status_code == 403, (method, path, r.status_code)
            assert r.json()["code"] == "token_scope"

    def test_revoked_token_unusable(self, harness):
        token = harness.client.post("/api/v1/tokens", headers=harness.auth("alice"),
                                    json={}).json()["token"]
        r = harness.client.delete(f"/api/v1/tokens/{token}", headers=harness.auth("alice"))
        assert r.status_code == 204
        r = harness.client.post("/api/v1/upload", headers=harness.bearer(token),
                                json={"filename": "x"})
        assert r.status_code == 401

    def test_expired_token_unauthorized(self, harness):
        r = harness.client.post("/api/v1/tokens", headers=harness.auth("alice"),
                                json={"ttl_days": -1})
        token = r.json()["token"]
        r = harness.client.post("/api/v1/upload", headers=harness.bearer(token),
                                json={"filename": "x"})
        assert r.status_code == 401


class TestAdmin:
    def test_admin_lists_users_and_events(self, harness):
        done = harness.upload("alice", b"audit me")
        r = harness.client.get("/api/v1/admin/users", headers=harness.auth("admin"))
        assert r.status_code == 200
        assert {u["user_id"] for u in r.json()["users"]} >= {"admin", "alice", "bob"}
        r = harness.client.get("/api/v1/admin/events", headers=harness.auth("admin"))
        actions = [e["action"] for e in r.json()["events"]]
        assert "upload_finished" in actions
        assert "key_enabled" in actions

    def test_non_admin_forbidden(self, harness):
        for path in ("/api/v1/admin/users", "/api/v1/admin/events"):
            r = harness.client.get(path, headers=harness.auth("alice"))
            assert r.status_code == 403

    def test_share_events_visible(self, harness, rsa_key):
        import base64
        done = harness.upload("alice", b"tracked")
        key = harness.dataset_key("alice", done["mnemonic"], rsa_key)
        harness.client.post(
            f"/api/v1/datasets/{done['mnemonic']}/share", headers=harness.auth("alice"),
            json={"key": base64.b64encode(key.bytes).decode(),
                  "user_id": "bob", "permission": "read"})
        r = harness.client.get("/api/v1/admin/events", headers=harness.auth("admin"))
        share_events = [e for e in r.json()["events"] if e["action"] == "share"]
        assert share_events and share_events[0]["mnemonic"] == done["mnemonic"]
