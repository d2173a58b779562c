"""Retrieval-based tool selection: task descriptions matched against tool descriptions."""

__version__ = "0.1.0"
