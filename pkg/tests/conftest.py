import random

import pytest

from securemmd import he


@pytest.fixture(scope="session")
def kp512():
    return he.keygen(512, seed=11)


@pytest.fixture(scope="session")
def kp512_peer():
    return he.keygen(512, seed=12)


@pytest.fixture(scope="session")
def tiny():
    # p=3, q=5: the smallest ring the scheme accepts
    return he.keypair_from_primes(3, 5)


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion and assert it."""

    def record(num, name, ok, detail, assert_ok=True):
        tag = "PASS" if ok else "FAIL"
        if not assert_ok:
            tag = "REPORT"
        line = f"[{tag}] {num} {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        if assert_ok:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
