#!/usr/bin/env python3
"""
Coverage Manifold Toolkit
Точка входа командной строки
"""

import sys

from dotenv import load_dotenv

from coverage_manifold.ui.cli import main


if __name__ == "__main__":
    load_dotenv()
    sys.exit(main())
