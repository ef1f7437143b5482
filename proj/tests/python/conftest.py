import os
import pathlib

import pytest


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("MICE_CLI")
    if not path:
        pytest.skip("MICE_CLI is not set")
    return path


@pytest.fixture(scope="session")
def schema():
    path = os.environ.get(
        "MICE_SCHEMA",
        str(pathlib.Path(__file__).resolve().parents[2] / "docs" / "run_report.schema.json"),
    )
    import json

    with open(path) as f:
        return json.load(f)
