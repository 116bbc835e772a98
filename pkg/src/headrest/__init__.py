"""Ear-position tracking and grid-switched active headrest simulation."""

__version__ = "0.1.0"
