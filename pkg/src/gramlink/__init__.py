"""Zero-shot link prediction from hierarchical character n-gram graphs."""

__version__ = "0.1.0"
