import json
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_CSV = REPO_ROOT / "fixtures" / "btc_usd_daily.csv"
FIXTURE_MANIFEST = REPO_ROOT / "fixtures" / "manifest.json"


@pytest.fixture(scope="session")
def fixture_csv() -> Path:
    return FIXTURE_CSV


@pytest.fixture(scope="session")
def fixture_manifest() -> dict:
    return json.loads(FIXTURE_MANIFEST.read_text())


@pytest.fixture
def tiny_csv(tmp_path) -> Path:
    """Three well-formed daily bars."""
    path = tmp_path / "tiny.csv"
    path.write_text(
        "Date,Open,High,Low,Close,Adj Close,Volume\n"
        "2020-01-01,100.0,110.0,95.0,105.0,105.0,1000\n"
        "2020-01-02,105.0,120.0,100.0,115.0,115.0,1500\n"
        "2020-01-03,115.0,130.0,110.0,125.0,125.0,900\n")
    return path
