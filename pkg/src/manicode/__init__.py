"""Locality-constrained feature coders, dictionary learning and manifold-mixing GAN blocks."""

__version__ = "0.1.0"
