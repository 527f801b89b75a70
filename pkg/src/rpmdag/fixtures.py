"""Bundled example DAGs."""

from __future__ import annotations

from importlib import resources

from .dag import BlockDag, BlockId, parse_dag_text

REFERENCE_K3_BLUE = frozenset("ABCDFGIJ")
REFERENCE_K3_RED = frozenset("EHK")
REFERENCE_K3_K = 3


def reference_k3_text() -> str:
    """Text of the bundled reference DAG whose maximum 3-cluster is known."""
    return resources.files("rpmdag.data").joinpath("reference_k3.dag").read_text()


def reference_k3() -> tuple[BlockDag, dict[str, BlockId]]:
    return parse_dag_text(reference_k3_text())
