"""Reweighted l1 recovery and weighted spectral soft-thresholding for matrix completion."""

__version__ = "0.1.0"
