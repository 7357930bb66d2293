"""Centrality graph convolutional networks for skeleton action recognition."""

__version__ = "0.1.0"
