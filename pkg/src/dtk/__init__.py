"""Downward-trend prediction and silent-sufferer detection toolkit."""

__version__ = "0.1.0"
