"""Masked acoustic-token speech restoration with semantic knowledge distillation."""

__version__ = "0.1.0"
