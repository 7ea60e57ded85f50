"""Desk-scale ab-initio cryo-EM reconstruction toolkit."""

__version__ = "0.1.0"
