"""Shared test harness: a real uvicorn server plus a CLI driver."""

from __future__ import annotations

import secrets
import socket
import threading
import time
from pathlib import Path

import uvicorn
import yaml
from click.testing import CliRunner

from dabih import cli as cli_mod
from dabih import crypto
from dabih.config import ServerConfig
from dabih.server import create_app


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class LiveServer:
    """A real uvicorn server in a thread, for CLI end-to-end tests."""

    def __init__(self, workdir: Path, root_key_pems: list[bytes], *,
                 admins: tuple[str, ...] = ("admin",), chunk_size: int | None = None):
        root_paths = []
        for i, pem in enumerate(root_key_pems):
            path = workdir / f"root_{i}.pub.pem"
            path.write_bytes(pem)
            root_paths.append(str(path))
        self.config = ServerConfig(
            host="127.0.0.1",
            port=_free_port(),
            storage_root=str(workdir / "storage"),
            db_path=str(workdir / "dabih.db"),
            root_key_paths=root_paths,
            admins=list(admins),
            **({"chunk_size": chunk_size} if chunk_size else {}),
        )
        self.workdir = workdir
        self.app = create_app(self.config)
        self._server = uvicorn.Server(uvicorn.Config(
            self.app, host=self.config.host, port=self.config.port, log_level="error"))
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.time() + 10
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("uvicorn did not start in time")
            time.sleep(0.02)

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    @property
    def state(self):
        return self.app.state.dabih

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
        self.state.close()


class CliHarness:
    """One config file per user; every call goes through the real CLI."""

    def __init__(self, server, workdir: Path):
        self.server = server
        self.workdir = workdir
        self.runner = CliRunner()

    def config_path(self, user: str) -> Path:
        return self.workdir / f"{user}.config"

    def run(self, user: str, *args, expect: int | None = 0, token: str | None = None):
        base = ["--config", str(self.config_path(user)), "--server", self.server.url,
                "--parallel", "1"]
        if token:
            base += ["--token", token]
        result = self.runner.invoke(cli_mod.main, base + [str(a) for a in args],
                                    catch_exceptions=False)
        if expect is not None:
            assert result.exit_code == expect, (
                f"exit {result.exit_code} != {expect}\nargs: {args}\n"
                f"stdout: {result.stdout}\nstderr: {result.stderr}")
        return result

    def login(self, user: str, admin: bool = False):
        name = "admin" if admin else user
        self.run(user, "login", "--user-id", name, "--name", name.title())

    def token_of(self, user: str) -> str:
        return yaml.safe_load(self.config_path(user).read_text())["token"]

    def setup_user_with_key(self, user: str, admin_user: str = "admin") -> Path:
        key_path = self.workdir / f"{user}_key.pem"
        self.run(user, "keygen", "--out", key_path, "--enroll")
        fingerprint = crypto.import_key(key_path.read_bytes()).fingerprint
        self.run(admin_user, "admin", "enable-key", fingerprint)
        config = self.config_path(user)
        doc = yaml.safe_load(config.read_text())
        doc["private_key"] = str(key_path)
        config.write_text(yaml.safe_dump(doc))
        return key_path

    def upload(self, user: str, path: Path, *extra) -> tuple[str, str]:
        """Upload one file, return (mnemonic, dataset_hash)."""
        result = self.run(user, "upload", path, *extra)
        line = [l for l in result.stdout.splitlines() if str(path.name) + ":" in l][-1]
        parts = line.split()
        return parts[1], parts[2]

    def private_key(self, user: str) -> crypto.PrivateKey:
        doc = yaml.safe_load(self.config_path(user).read_text())
        key = crypto.import_key(Path(doc["private_key"]).read_bytes())
        assert isinstance(key, crypto.PrivateKey)
        return key


def make_file(path: Path, size: int, seed: int = 0) -> bytes:
    if seed == 0:
        data = secrets.token_bytes(size)
    else:
        data = (seed.to_bytes(4, "big") * (size // 4 + 1))[:size]
    path.write_bytes(data)
    return data
