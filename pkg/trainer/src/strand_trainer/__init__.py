"""Training tools for the strand G-buffer reconstruction networks."""

__version__ = "0.1.0"
