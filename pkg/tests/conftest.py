import contextlib

import numpy as np
import pytest

_acceptance_lines = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """``with criterion("5", "title") as c: c.detail = ...; assert ...``

    Prints and records one PASS/FAIL line per acceptance criterion; a failed
    assertion or an exception inside the block records FAIL.
    """
    @contextlib.contextmanager
    def run(cid, title):
        class Line:
            detail = ""
        line = Line()
        ok = False
        try:
            yield line
            ok = True
        finally:
            text = f"criterion {cid} {'PASS' if ok else 'FAIL'}: {title}" + (f" | {line.detail}" if line.detail else "")
            print(text)
            _acceptance_lines.append(text)
    return run


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for text in sorted(_acceptance_lines, key=lambda t: int(t.split()[1])):
            terminalreporter.write_line(text)
