"""Local RBF histogram layers for statistical texture classification."""

__version__ = "0.1.0"
