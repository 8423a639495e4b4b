"""Sparse basis learning on connectome matrices with a coupled score network."""

__version__ = "0.1.0"
