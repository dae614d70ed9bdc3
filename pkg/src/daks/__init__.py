"""Simulator and test bench for gossip-based task computing on unreliable processors."""

__version__ = "0.1.0"
