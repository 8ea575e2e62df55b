"""Run the acceptance suite and print one PASS/FAIL line per criterion.

Set PROTOSEL_ACCEPT_FULL=1 to add the B = 800 power-ratio checks.
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent
    sys.exit(pytest.main([str(root / "tests" / "test_acceptance.py"), "-s", "-q",
                          "-p", "no:cacheprovider"]))
