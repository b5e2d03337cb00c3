import os

import pytest

from pachyderm import _kernel_py
from pachyderm.store import open_store

try:
    from pachyderm import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None

KERNELS = [_kernel_py] + ([_kernel_c] if _kernel_c is not None else [])


@pytest.fixture(params=KERNELS, ids=lambda k: k.NAME)
def kernel(request):
    return request.param


@pytest.fixture
def store_path(tmp_path):
    return str(tmp_path / "store.pdb")


@pytest.fixture
def session(store_path):
    s = open_store(store_path)
    yield s
    s.close()


@pytest.fixture
def reopen(store_path):
    """Close a session and open the same store again."""

    def _reopen(s):
        s.close()
        return open_store(store_path)

    return _reopen


# -- acceptance summary ---------------------------------------------------------

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _ACCEPTANCE.append((marker.kwargs.get("criterion", 0), marker.kwargs.get("title", item.name), report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")


def pytest_report_header(config):
    from pachyderm import BACKEND

    return f"pachyderm codec backend: {BACKEND} (PACHYDERM_PURE_PYTHON={os.environ.get('PACHYDERM_PURE_PYTHON', '')})"
