"""
Theseus - Utilities
===================

Filesystem, table output and performance helpers.
"""
