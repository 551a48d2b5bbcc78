"""Bounded exhaustive crash-consistency testing of simulated file systems."""

__version__ = "0.1.0"
