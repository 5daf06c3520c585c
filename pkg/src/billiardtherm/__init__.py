"""Thermodynamic state variables from quantum billiard spectra."""

__version__ = "0.1.0"
