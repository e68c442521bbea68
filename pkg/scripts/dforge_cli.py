#!/usr/bin/env python3
"""
dforge CLI launcher
Curation, planning, fusion, sampler simulation and loss evaluation from the command line.
"""

import sys
import os

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.pipeline.cli import main

if __name__ == "__main__":
    sys.exit(main())
