"""Undisclosed IIoT vulnerability sharing with trust-based protection."""

__version__ = "0.1.0"
