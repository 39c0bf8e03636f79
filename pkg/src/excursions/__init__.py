"""Excursion laws of one-dimensional diffusions observed through a level set."""

__version__ = "0.1.0"
