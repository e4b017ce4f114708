"""Metastability of the random-field Curie-Weiss model under Glauber dynamics."""

__version__ = "0.1.0"
