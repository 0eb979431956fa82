"""plotkit: figure rendering for medianflow experiment outputs."""

from .figures import FigureSpec, render  # noqa: F401

__version__ = "0.1.0"
