"""Opinion dynamics on directed random graphs and their Galton-Watson tree limits."""

from .backend import NAME as BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
