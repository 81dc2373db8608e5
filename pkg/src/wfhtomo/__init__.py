"""Simulation and reconstruction toolkit for weak-field-homodyne photon-counting
quantum state tomography."""

__version__ = "0.1.0"
