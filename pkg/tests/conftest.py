import os

import pytest

# acceptance verdicts collected during the session, printed at the end
VERDICTS = {}


def record(criterion: int, ok: bool, detail: str):
    VERDICTS[criterion] = (ok, detail)
    return ok


@pytest.fixture
def tmp_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("MPDIRK_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path / "cache"


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(VERDICTS):
        ok, detail = VERDICTS[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_configure(config):
    os.environ.setdefault("MPDIRK_CACHE_DIR", str(config.rootpath / ".pytest_cache" / "mpdirk"))
