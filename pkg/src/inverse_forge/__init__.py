"""Inverse design of alloy compositions from partial phase diagrams."""

__version__ = "0.1.0"
