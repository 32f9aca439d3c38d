import json
from pathlib import Path

import pytest

from zsikit import maskgeom

DATA = Path(__file__).parent / "data"


@pytest.fixture(params=sorted(maskgeom.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    mod = maskgeom.available_backends()[request.param]
    monkeypatch.setattr(maskgeom, "kernels", mod)
    return mod


@pytest.fixture
def coco_rle_fixture():
    return json.loads((DATA / "coco_rle_fixture.json").read_text())


# (criterion, passed, detail) rows recorded by test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
