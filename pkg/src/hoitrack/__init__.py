"""SfM-free anchor-and-track hand-object trajectory reconstruction."""

__version__ = "0.1.0"
