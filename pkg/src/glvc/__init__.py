"""Generative latent video compression at desk scale."""

__version__ = "0.1.0"
