"""Command groups of the flam CLI."""

from flam.cli import analysis, fitting, simulate

__all__ = ["analysis", "fitting", "simulate"]
