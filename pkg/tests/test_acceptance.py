"""Acceptance criteria 1-11, one pass/fail line per criterion.

The lines are collected into the pytest terminal summary.
"""

import subprocess
import sys
import time

import pytest

from conftest import ACCEPTANCE_LINES
from ovc.checks import SUITES, run_suite


@pytest.mark.parametrize("name", [name for name, _ in SUITES])
def test_criterion(name):
    result = run_suite(name)
    print(result.line())
    ACCEPTANCE_LINES.append(result.line())
    assert result.passed, result.detail


def test_criterion_11_selftest():
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "ovc", "selftest"], capture_output=True,
                          text=True, timeout=600)
    elapsed = time.perf_counter() - start
    ok = proc.returncode == 0 and elapsed < 180
    line = f"[{'PASS' if ok else 'FAIL'}] 11 selftest: exit {proc.returncode}, {elapsed:.1f}s"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert elapsed < 180
    assert proc.stdout.strip().splitlines()[-1] == "10/10 suites passed"
