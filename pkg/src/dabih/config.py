"""Server configuration: YAML file plus DABIH_* environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEFAULT_CHUNK_SIZE = 2 * 1024 * 1024  # 2 MiB
DEFAULT_TOKEN_TTL_DAYS = 30
DEFAULT_SESSION_IDLE_HOURS = 24


class ConfigError(Exception):
    pass


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    storage_root: str = "./data/storage"
    db_path: str = "./data/dabih.db"
    root_key_paths: list[str] = field(default_factory=list)
    admins: list[str] = field(default_factory=list)
    chunk_size: int = DEFAULT_CHUNK_SIZE
    token_ttl_days: int = DEFAULT_TOKEN_TTL_DAYS
    session_idle_hours: int = DEFAULT_SESSION_IDLE_HOURS
    static_dir: str | None = None  # optional web client assets, served at /
    adjectives_path: str | None = None  # larger mnemonic word lists, one word
    names_path: str | None = None  # per line, UTF-8; bundled lists otherwise

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict[str, str] | None = None) -> "ServerConfig":
        """Read the YAML config file (if any), then apply environment
        overrides. Environment wins over the file."""
        env = os.environ if env is None else env
        values: dict = {}
        path = path or env.get("DABIH_CONFIG")
        if path:
            try:
                loaded = yaml.safe_load(Path(path).read_text("utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            if loaded is not None:
                if not isinstance(loaded, dict):
                    raise ConfigError(f"config file must be a mapping: {path}")
                values.update(loaded)

        def override(key: str, env_name: str, cast=str):
            raw = env.get(env_name)
            if raw is not None:
                values[key] = cast(raw)

        override("host", "DABIH_HOST")
        override("port", "DABIH_PORT", int)
        override("storage_root", "DABIH_STORAGE_ROOT")
        override("db_path", "DABIH_DB_PATH")
        override("root_key_paths", "DABIH_ROOT_KEYS", lambda v: [p for p in v.split(",") if p])
        override("admins", "DABIH_ADMINS", lambda v: [a for a in v.split(",") if a])
        override("chunk_size", "DABIH_CHUNK_SIZE", int)
        override("token_ttl_days", "DABIH_TOKEN_TTL_DAYS", int)
        override("session_idle_hours", "DABIH_SESSION_IDLE_HOURS", int)
        override("static_dir", "DABIH_STATIC_DIR")
        override("adjectives_path", "DABIH_ADJECTIVES")
        override("names_path", "DABIH_NAMES")

        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**values)
        if config.chunk_size < 16:
            raise ConfigError("chunk_size must be at least one cipher block")
        return config
