"""Continuous product-graph neural networks: separable heat-kernel layers on Cartesian product graphs."""

__version__ = "0.1.0"
