"""Trend-figure renderer for vosmdma sweep CSVs."""

__version__ = "0.1.0"

from .render import CSV_COLUMNS, METRICS, PlotSpec, SchemaError, read_sweep_csv, render

__all__ = ["CSV_COLUMNS", "METRICS", "PlotSpec", "SchemaError", "read_sweep_csv",
           "render", "__version__"]
