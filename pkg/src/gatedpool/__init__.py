"""Learnable orderless pooling, Context Gating and two-stream video classification."""

__version__ = "0.1.0"
