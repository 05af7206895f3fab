"""Learned uncertainty predictor: training and the line-protocol server."""

__version__ = "0.1.0"
