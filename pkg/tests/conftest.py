import numpy as np
import pytest

from secretprot.domain import ExampleRecord, SecretMap, SecretSpec


@pytest.fixture
def tiny_map():
    examples = [
        ExampleRecord("a", {"s1"}, (1.0, 0.0, 1.0)),
        ExampleRecord("b", {"s1", "s2"}, (0.0, 1.0, -1.0)),
        ExampleRecord("c", {"s2"}, (1.0, 1.0, 0.5)),
    ]
    secrets = [SecretSpec("s1", 1e-3, 1e-2), SecretSpec("s2", 1e-3, 5e-2)]
    return SecretMap.build(examples, secrets)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
