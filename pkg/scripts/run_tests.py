#!/usr/bin/env python3
"""
Simple test runner for supercorr
"""

import os
import subprocess
import sys


def run_pytest(fast: bool):
    """Run pytest with consistent options"""
    env = os.environ.copy()
    env["ENVIRONMENT"] = "test"

    command = [
        "python3",
        "-m",
        "pytest",
        "tests/",
        "-v",
        "--tb=short",
        "--disable-warnings",
        "--color=yes",
    ]
    if fast:
        command += ["-m", "not slow"]
    return subprocess.run(command, env=env)


def main():
    fast = "--fast" in sys.argv[1:]
    print("🧪 Running tests" + (" (skipping slow SCF ladders)" if fast else ""))
    result = run_pytest(fast)
    if result.returncode == 0:
        print("✅ All tests passed")
    else:
        print("❌ Some tests failed")
    sys.exit(result.returncode)


if __name__ == "__main__":
    main()
