"""Publication-style figures from gossipctrl experiment artifacts.

Read-only over the experiment layer's CSV/JSON files: four figure kinds
(regret vs horizon, identification error vs budget and network size,
consensus distance vs round, prediction gap vs memory length), rendered
deterministically so identical inputs reproduce identical bytes.
"""

from .errors import MissingColumn, PlotError, SchemaMismatch
from .figures import PlotResult, plot
from .spec import KINDS, FigureSpec, load_spec

__all__ = [
    "FigureSpec",
    "KINDS",
    "MissingColumn",
    "PlotError",
    "PlotResult",
    "SchemaMismatch",
    "load_spec",
    "plot",
]

__version__ = "0.1.0"
