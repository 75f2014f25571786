"""Smoke-run the narrative demo scripts (the slow reuse demo is skipped;
its behavior is covered by the efficiency acceptance criterion)."""

import subprocess
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("script", [
    "01_analyze_an_incident.py",
    "02_graph_keys_and_similarity.py",
    "04_benchmark_fault_kinds.py",
])
def test_demo_runs_clean(script):
    proc = subprocess.run(
        [sys.executable, str(DEMOS / script)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip()


def test_incident_demo_finds_the_truth():
    proc = subprocess.run(
        [sys.executable, str(DEMOS / "01_analyze_an_incident.py")],
        capture_output=True, text=True, timeout=120,
    )
    assert "-> correct" in proc.stdout
