"""Static figure rendering for batchbandit CSV outputs."""

from .figures import RENDERERS, FigureRequest, FigureSchemaError, render

__version__ = "0.1.0"
