from __future__ import annotations

import subprocess
from pathlib import Path

import pytest

from conftest import PYTHON, have_gxx

DEMOS = sorted((Path(__file__).resolve().parent.parent / "demos").glob("plot_*.py"))


@pytest.mark.parametrize("script", DEMOS, ids=[d.stem for d in DEMOS])
def test_demo_runs(script, tmp_path):
    if "cpp" in script.stem and not have_gxx():
        pytest.skip("g++ not available")
    proc = subprocess.run([PYTHON, str(script)], capture_output=True, text=True, cwd=tmp_path, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip()
