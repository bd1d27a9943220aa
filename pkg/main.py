"""
Main entry point for the transmission-line channel toolkit.

Run this script with a command and a topology file:
    python main.py tf --topology topologies/minimal.topo --out out
"""

import sys

from src.app import main

if __name__ == "__main__":
    sys.exit(main())
