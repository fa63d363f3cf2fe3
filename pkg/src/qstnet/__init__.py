"""Quantum state tomography of bosonic states from Husimi-Q phase-space data."""

__version__ = "0.1.0"
