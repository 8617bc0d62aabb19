"""Latent world-model planning for a 2D driving micro-simulator."""

__version__ = "0.1.0"
