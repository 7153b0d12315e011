"""Plotting functions."""
from .plot_violations import plot_violations
from .plot_wafer import plot_wafer

__all__ = ["plot_wafer", "plot_violations"]
