import warnings

import pytest

# one line per acceptance criterion, echoed again in the terminal summary
CRITERIA = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


@pytest.fixture
def report():
    return record


@pytest.fixture(autouse=True)
def _no_domain_warnings():
    # domain-size advice is exercised explicitly where it matters
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="domain:")
        yield


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
