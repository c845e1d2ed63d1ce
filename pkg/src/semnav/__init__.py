"""Cost-aware semantic traversability navigation engine."""

__version__ = "0.1.0"
