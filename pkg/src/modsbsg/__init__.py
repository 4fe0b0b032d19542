"""Modular state-based Stackelberg games for self-optimizing production plants."""
__version__ = "0.1.0"
