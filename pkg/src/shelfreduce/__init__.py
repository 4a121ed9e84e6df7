"""Learned integer strategies for a gridded bookshelf insertion MICP."""

__version__ = "0.1.0"
