#!/usr/bin/env python3
"""Run the acceptance suite and show the one-line PASS/FAIL criterion log.

Equivalent to: pytest tests/test_acceptance.py -s -v
"""
import subprocess
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]


def main() -> int:
    result = subprocess.run(
        [
            sys.executable,
            "-m",
            "pytest",
            str(REPO / "tests" / "test_acceptance.py"),
            "-s",
            "-v",
            "--no-header",
        ],
        cwd=REPO,
    )
    return result.returncode


if __name__ == "__main__":
    raise SystemExit(main())
