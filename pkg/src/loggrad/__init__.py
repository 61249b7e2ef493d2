"""Log-gradient sensor inputs for tiny CNN vision experiments."""

__version__ = "0.1.0"
