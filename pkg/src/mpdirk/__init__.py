"""Perturbed and mixed-precision DIRK time integration with stabilized corrections."""

__version__ = "0.1.0"
