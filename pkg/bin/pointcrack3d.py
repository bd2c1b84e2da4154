#!/usr/bin/env python3
"""
pointcrack3d: crack instance detection on coloured LIDAR point clouds

Script form of the `pointcrack3d` console entry point. Run with the package
installed (pip install -e .) or with src/ on PYTHONPATH.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pointcrack3d.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
