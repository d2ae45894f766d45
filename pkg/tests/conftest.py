import os

import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="also run tests marked slow")


def pytest_configure(config):
    config.acceptance = {}


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("PCB_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow: pass --runslow or set PCB_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def record(request):
    """``record(key, ok, detail)`` stores one acceptance outcome for the end-of-run summary."""

    def _record(key, ok, detail):
        request.config.acceptance[key] = (bool(ok), detail)
        print(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter, config):
    results = config.acceptance
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k[2:])):
        ok, detail = results[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
