"""Simulation of frequency-degenerate multi-photon polarization states:
generation, linear-optical manipulation, threshold detection and
maximum-likelihood tomography."""

__version__ = "0.1.0"
