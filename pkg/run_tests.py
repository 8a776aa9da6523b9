#!/usr/bin/env python3
"""
Simple test runner for crowd-rom
Runs the test suite from the root directory
"""

import subprocess
import sys
from pathlib import Path


def main():
    """Delegate to tests/run_tests.py, passing arguments through"""
    print("Running crowd-rom test suite")
    print("=" * 50)

    test_runner = Path(__file__).parent / "tests" / "run_tests.py"
    if not test_runner.exists():
        print("Test runner not found; run from the project root")
        return False

    try:
        result = subprocess.run([sys.executable, str(test_runner), *sys.argv[1:]])
        return result.returncode == 0
    except OSError as e:
        print(f"Error running tests: {e}")
        return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
