"""Command-line package exposing the ``segmentmonkey`` click group."""

from .app import cli, main

__all__ = ["cli", "main"]
