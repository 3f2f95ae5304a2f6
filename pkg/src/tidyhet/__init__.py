"""Heterogeneous multi-agent tidying in a multi-room gridworld."""

__version__ = "0.1.0"
