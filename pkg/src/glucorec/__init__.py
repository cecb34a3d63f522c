"""Carbohydrate and bolus recommendation pipeline."""

__version__ = "0.1.0"
