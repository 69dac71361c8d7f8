from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from medvqa_eval.fixtures import build_small_manifest, write_dataset_tree

# filled by the acceptance suite's criterion() helper
ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for status, name in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def small_dataset(tmp_path):
    """20-sample test-split dataset on disk: manifest + placeholder images."""
    manifest = build_small_manifest(20)
    paths = write_dataset_tree(manifest, tmp_path / "data")
    return manifest, paths
