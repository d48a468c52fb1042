"""Limit cycles of SDEs: return-map geometry, exit times and neuron-model epoch counts."""

__version__ = "0.1.0"
