"""Desk-scale laboratory for distillation-enhanced speculative decoding."""

__version__ = "0.1.0"
