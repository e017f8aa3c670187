"""
Theseus - Interfaces
====================

User-facing entry points.
"""
