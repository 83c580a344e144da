from __future__ import annotations

import pytest

from dabih import crypto
from helpers import LiveServer

_ACCEPTANCE_REPORTS: list[tuple[str, str]] = []


@pytest.fixture(scope="session")
def rsa_key() -> crypto.PrivateKey:
    return crypto.PrivateKey.generate()


@pytest.fixture(scope="session")
def rsa_key_b() -> crypto.PrivateKey:
    return crypto.PrivateKey.generate()


@pytest.fixture(scope="session")
def root_key() -> crypto.PrivateKey:
    return crypto.PrivateKey.generate()


@pytest.fixture()
def live_server(tmp_path, root_key):
    server = LiveServer(tmp_path, [root_key.public.pem()])
    yield server
    server.stop()


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE_REPORTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_REPORTS:
        terminalreporter.section("acceptance criteria")
        for name, outcome in _ACCEPTANCE_REPORTS:
            verdict = "PASS" if outcome == "passed" else outcome.upper()
            terminalreporter.write_line(f"{verdict}  {name}")
