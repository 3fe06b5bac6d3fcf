#!/usr/bin/env python3
"""
QLDS launcher
Usage: python run_qlds.py <command> [options]
"""

import sys
from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
