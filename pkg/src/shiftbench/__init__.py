"""Desk-scale evaluation of predictive uncertainty under dataset shift."""

__version__ = "0.1.0"
