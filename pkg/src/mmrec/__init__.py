"""Transformer sequential recommenders with multi-modal auxiliary item information."""

__version__ = "0.1.0"
