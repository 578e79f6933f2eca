"""Shared helpers: fixture artifact directory and spec-file writer."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture()
def write_spec(tmp_path):
    """Write a figure-spec JSON into tmp_path and return its path."""

    def _write(name: str = "spec.json", **fields) -> Path:
        fields.setdefault("output", str(tmp_path / "figure.png"))
        path = tmp_path / name
        path.write_text(json.dumps(fields))
        return path

    return _write


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)
