"""Rate-independent crystal plasticity by incremental energy minimization."""

__version__ = "0.1.0"
