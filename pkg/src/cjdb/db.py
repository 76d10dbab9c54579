"""Connection settings and helpers.

Settings resolve flag > environment > config file. The password is only
ever read from ``CJDB_PASSWORD`` (or embedded in ``CJDB_DSN``).
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path

import psycopg
from psycopg.conninfo import conninfo_to_dict, make_conninfo

from .errors import TransportError

ENV_DSN = "CJDB_DSN"
ENV_PASSWORD = "CJDB_PASSWORD"
ENV_CONFIG = "CJDB_CONFIG"
DEFAULT_CONFIG = Path("~/.config/cjdb/cjdb.ini")


@dataclass
class ConnectionConfig:
    host: str | None = None
    port: int | None = None
    user: str | None = None
    database: str | None = None
    schema: str | None = None
    dsn: str | None = None

    def conninfo(self) -> str:
        params = conninfo_to_dict(self.dsn) if self.dsn else {}
        for key, name in (("host", "host"), ("port", "port"), ("user", "user"), ("database", "dbname")):
            value = getattr(self, key)
            if value is not None:
                params[name] = str(value)
        password = os.environ.get(ENV_PASSWORD)
        if password:
            params["password"] = password
        return make_conninfo(**params)

    def describe(self) -> str:
        """Connection target without credentials, for logs."""
        return redact(self.conninfo())


def config_path(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get(ENV_CONFIG) or DEFAULT_CONFIG).expanduser()


def load_config(path: str | Path | None = None, **flags) -> ConnectionConfig:
    """Merge the ``[connection]`` section of the config file, ``CJDB_DSN`` and
    explicit ``flags`` (None values are ignored)."""
    cfg = ConnectionConfig()
    p = config_path(path)
    if p.is_file():
        parser = configparser.ConfigParser()
        parser.read(p)
        if parser.has_section("connection"):
            sec = parser["connection"]
            for f in fields(ConnectionConfig):
                if f.name in sec:
                    setattr(cfg, f.name, sec[f.name])
    env_dsn = os.environ.get(ENV_DSN)
    if env_dsn:
        # the environment DSN outranks individual file settings
        cfg = ConnectionConfig(schema=cfg.schema, dsn=env_dsn)
    for key, value in flags.items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.port is not None:
        cfg.port = int(cfg.port)
    return cfg


_SECRET = re.compile(r"(password\s*=\s*)('(?:[^'\\]|\\.)*'|\S+)", re.IGNORECASE)
_URL_SECRET = re.compile(r"(://[^:/@]+:)([^@]+)(@)")


def redact(text: str) -> str:
    text = _SECRET.sub(r"\1***", text)
    text = _URL_SECRET.sub(r"\1***\3", text)
    # belt and braces: the literal secret, wherever it turns up
    password = os.environ.get(ENV_PASSWORD)
    if password and len(password) >= 3:
        text = text.replace(password, "***")
    return text


def connect(target: str | ConnectionConfig | None = None, **kwargs) -> psycopg.Connection:
    """Open an autocommit connection; use ``conn.transaction()`` for atomic work.

    Queries are sent with the simple query protocol (client-side binding)
    and without server-side prepared statements, which keeps the connection
    usable behind poolers and protocol proxies.
    """
    if target is None:
        target = load_config()
    conninfo = target.conninfo() if isinstance(target, ConnectionConfig) else target
    kwargs.setdefault("autocommit", True)
    kwargs.setdefault("connect_timeout", 15)
    try:
        return psycopg.connect(
            conninfo,
            cursor_factory=psycopg.ClientCursor,
            prepare_threshold=None,
            **kwargs,
        )
    except psycopg.OperationalError as exc:
        raise TransportError(redact(str(exc))) from exc
