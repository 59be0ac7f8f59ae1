"""
Pytest configuration file.
Puts the project root on sys.path and exposes the problem-file fixtures.
"""
import os
import sys
from pathlib import Path

import pytest

project_root = os.path.dirname(os.path.abspath(__file__))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

DATA_DIR = Path(project_root) / "tests" / "data"


@pytest.fixture
def data_file():
    """Path of a problem file under tests/data."""
    def _path(name: str) -> Path:
        return DATA_DIR / name
    return _path


@pytest.fixture(autouse=True)
def _worker_threads(monkeypatch):
    monkeypatch.setenv("KKT_SCOPE_THREADS", "2")
