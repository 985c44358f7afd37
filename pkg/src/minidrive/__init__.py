"""Desk-scale autoregressive video-action driving policy on a synthetic 2-D world."""

__version__ = "0.1.0"
