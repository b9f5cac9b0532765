import socket

import numpy as np
import pytest

from mapc import topology

# Acceptance outcomes, filled by tests/test_acceptance.py and printed at the end.
ACCEPTANCE: dict = {}


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True, scope="session")
def _no_network():
    """The suite is offline: any outbound TCP/UDP connect fails loudly."""
    real = socket.socket.connect

    def guarded(self, address):
        if self.family == socket.AF_UNIX:
            return real(self, address)
        raise NetworkBlocked(f"network access attempted: {address!r}")

    socket.socket.connect = guarded
    yield
    socket.socket.connect = real


@pytest.fixture(autouse=True)
def _no_llm_env(monkeypatch):
    for var in ("MAPC_LLM_BASE_URL", "MAPC_LLM_API_KEY", "MAPC_LLM_MODEL", "MAPC_EMBED_MODEL"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(scope="session")
def sr2():
    return topology.generate_scenario("co-sr", 2, 0)


@pytest.fixture(scope="session")
def tdma2():
    return topology.generate_scenario("co-tdma", 2, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {desc} ({detail})")
