"""Error types for the figure layer."""

from __future__ import annotations


class PlotError(Exception):
    """Base class for every error this package raises on purpose."""


class SchemaMismatch(PlotError):
    """The figure spec or an input artifact has the wrong shape or is missing."""


class MissingColumn(PlotError):
    """An input table lacks a required column or has no data rows."""
