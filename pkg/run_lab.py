#!/usr/bin/env python3
"""
Launcher for the Loewner laboratory: puts src/ on the path and forwards argv to main().

    python run_lab.py trace --out runs/trace --kappa 2
"""

import sys
from pathlib import Path

SRC_DIR = Path(__file__).resolve().parent / "src"


def launch() -> int:
    """Import the CLI lazily so a missing dependency is reported instead of a traceback."""
    sys.path.insert(0, str(SRC_DIR))
    try:
        from main import main
    except ImportError as e:
        print(f"Import error: {e}", file=sys.stderr)
        print("Install requirements.txt and run from the project directory", file=sys.stderr)
        return 1
    try:
        return main(sys.argv[1:])
    except KeyboardInterrupt:
        print("\nRun interrupted by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(launch())
