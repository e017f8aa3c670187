#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Main Module

Entry point for the ``theseus`` command and ``python -m theseus``.

Usage:
    theseus pipeline --config run.cfg --seeds 5 --out runs/bracket
    theseus analyze-replacement --predecessor p.ckpt --compressed h.ckpt
    theseus speed-bench --reps 20
    theseus --help
"""

import sys

from theseus.interfaces.cli import main as cli_main


def main() -> int:
    """Main entry point for the application."""
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
