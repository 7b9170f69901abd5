import os
from pathlib import Path

import pytest
from hypothesis import settings

from maldicom import corpus

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def sample_csv() -> Path:
    return DATA / "malmem_sample.csv"


@pytest.fixture
def pe_bytes() -> bytes:
    return corpus.make_pe(stub_len=64, n_sections=2, seed=1)


@pytest.fixture
def dicom_bytes() -> bytes:
    return corpus.make_dicom(n_meta=3, n_body=12, seed=1)


ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def acceptance():
    """``acceptance(criterion, ok, detail, soft=False)`` records and prints one result line."""

    def record(criterion: str, ok: bool, detail: str, soft: bool = False) -> bool:
        status = "PASS" if ok else ("FAIL (soft)" if soft else "FAIL")
        ACCEPTANCE.append((criterion, status, detail))
        print(f"{criterion}: {status} | {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{criterion}: {status} | {detail}")
