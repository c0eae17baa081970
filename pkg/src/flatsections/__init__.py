"""Uniformly bounded orthonormal section pipelines on complex projective space."""

__version__ = "0.1.0"
