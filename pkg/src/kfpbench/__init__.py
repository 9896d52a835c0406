"""Numerical toolkit for the Kramers-Fokker-Planck operator on a half-line."""

__version__ = "0.1.0"
