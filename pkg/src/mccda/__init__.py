"""Minimum Class Confusion for versatile domain adaptation, at desk scale."""

__version__ = "0.1.0"
