import pytest

from elcodec.modelcodec import load_reference
from elcodec.pipeline import default_initial_model

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def initial_model():
    return load_reference(default_initial_model())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {line}")
