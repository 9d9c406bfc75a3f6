"""FMCW radar face recognition with reconstruction-based out-of-distribution rejection."""

__version__ = "0.1.0"
