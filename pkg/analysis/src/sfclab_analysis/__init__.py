"""Plotting and tabulation for sfclab evaluation outputs.

Everything here is a pure function of the CSV files the runner writes:
learning curves, hourly energy, hourly latency and the per-slice summary.
"""

from .plots import (SchemaError, plot_energy, plot_latency, plot_learning,
                    read_rows, render_slice_table)

__all__ = ["SchemaError", "plot_learning", "plot_energy", "plot_latency",
           "render_slice_table", "read_rows"]
