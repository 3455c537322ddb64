"""Interaction-aware navigation at an unsignalized intersection."""

__version__ = "0.1.0"
