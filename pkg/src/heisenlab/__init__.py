"""Imaginary-time Heisenberg ferromagnet in fixed-magnon sectors versus lattice heat-flow approximants."""

__version__ = "0.1.0"
