"""
Theseus - Progressive module replacement toolkit.
This package trains a predecessor encoder, compresses it by stochastically
swapping its layer groups for compact successors, and assembles the successor.
"""

__version__ = "0.1.0"
