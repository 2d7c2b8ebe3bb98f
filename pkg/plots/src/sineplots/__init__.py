"""Figure rendering for the sinebeta engine's csv/json output files.

The renderer talks to the simulation package only through its documented
file schemas, so either side can be swapped out independently.
"""

from .io import SchemaError, read_csv_columns, read_summary
from .render import FigureSpec, KINDS, render

__all__ = [
    "FigureSpec",
    "KINDS",
    "SchemaError",
    "read_csv_columns",
    "read_summary",
    "render",
]
