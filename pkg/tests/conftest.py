"""Shared fixtures.

Database tests run against ``CJDB_TEST_DSN`` when set (any PostgreSQL with
PostGIS available). Otherwise a throwaway PGlite + PostGIS server from
``tools/pglite-server`` is started for the session (needs node and npm).
"""

from __future__ import annotations

import os
import shutil
import socket
import subprocess
import sys
import tempfile
import time
import uuid
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SERVER_DIR = ROOT / "tools" / "pglite-server"
sys.path.insert(0, str(Path(__file__).parent))


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _start_pglite(tmp: Path):
    node = shutil.which("node")
    if node is None:
        pytest.skip("no CJDB_TEST_DSN and node is not installed")
    if not (SERVER_DIR / "node_modules" / "@electric-sql" / "pglite-postgis").is_dir():
        npm = shutil.which("npm")
        if npm is None:
            pytest.skip("pglite server dependencies missing and npm unavailable")
        subprocess.run([npm, "install", "--no-audit", "--no-fund"], cwd=SERVER_DIR, check=True,
                       stdout=subprocess.DEVNULL)
    port = _free_port()
    log = open(tmp / "server.log", "w")
    proc = subprocess.Popen(
        [node, "server.mjs", str(port), str(tmp / "data")],
        cwd=SERVER_DIR, stdout=subprocess.PIPE, stderr=log, text=True,
    )
    deadline = time.time() + 120
    while time.time() < deadline:
        line = proc.stdout.readline()
        if line.startswith("ready"):
            break
        if proc.poll() is not None:
            raise RuntimeError(f"pglite server exited: {(tmp / 'server.log').read_text()}")
    else:
        proc.kill()
        raise RuntimeError("pglite server did not start")
    return proc, f"host=127.0.0.1 port={port} user=postgres dbname=postgres"


@pytest.fixture(scope="session")
def pg_dsn():
    dsn = os.environ.get("CJDB_TEST_DSN")
    if dsn:
        yield dsn
        return
    tmp = Path(tempfile.mkdtemp(prefix="cjdb-pglite-"))
    proc, dsn = _start_pglite(tmp)
    from cjdb.db import connect

    with connect(dsn) as conn:
        conn.execute("CREATE EXTENSION IF NOT EXISTS postgis")
    os.environ["CJDB_TEST_DSN"] = dsn
    try:
        yield dsn
    finally:
        os.environ.pop("CJDB_TEST_DSN", None)
        proc.terminate()
        try:
            proc.wait(timeout=20)
        except subprocess.TimeoutExpired:
            proc.kill()
        shutil.rmtree(tmp, ignore_errors=True)


@pytest.fixture
def conn(pg_dsn):
    from cjdb.db import connect

    c = connect(pg_dsn)
    yield c
    c.close()


@pytest.fixture
def schema_name(conn):
    name = "t_" + uuid.uuid4().hex[:12]
    yield name
    conn.execute(f"DROP SCHEMA IF EXISTS {name} CASCADE")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(results):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}: {detail}")
