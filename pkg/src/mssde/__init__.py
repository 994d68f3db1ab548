"""Simulation and averaging of diffusions with fast state-dependent Markov switching."""

__version__ = "0.1.0"
