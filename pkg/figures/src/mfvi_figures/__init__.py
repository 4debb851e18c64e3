"""Figure rendering for mfvi CSV outputs (file-format coupling only)."""

from .render import KINDS, SCHEME_COLORS, FigureSpec, build_figure, render
from .schemas import SchemaError, read_functionals, read_hist, read_summary

__version__ = "0.1.0"
