"""Figure rendering for factoid-forge experiment CSVs."""

__version__ = "0.1.0"

from .render import FigureError, FigureSpec, RenderResult, render, render_all
