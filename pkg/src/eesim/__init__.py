"""Simulator for perturbations of accelerating FLRW universes filled with an irrotational fluid."""

__version__ = "0.1.0"
