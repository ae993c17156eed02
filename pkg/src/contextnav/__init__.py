"""Training-free text-goal instance navigation in a synthetic 2.5D world."""

__version__ = "0.1.0"
