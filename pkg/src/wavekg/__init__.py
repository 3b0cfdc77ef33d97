"""Pseudo-spectral wave / Klein-Gordon null-form simulator and diagnostics."""
__version__ = "0.1.0"
