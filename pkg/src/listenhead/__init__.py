"""Listener head-motion prediction from speaker audio."""

__version__ = "0.1.0"
