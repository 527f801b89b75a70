from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rpmdag.fixtures import reference_k3


@pytest.fixture(scope="session")
def reference_dag():
    """The shipped reference DAG: (dag, token -> id map)."""
    return reference_k3()
