"""Simulation and structural diagnostics for stochastic Hamiltonian systems."""
__version__ = "1.0.0"
