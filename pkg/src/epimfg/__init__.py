"""Mean-field games of epidemic propagation under full and partial observation."""

__version__ = "0.1.0"
