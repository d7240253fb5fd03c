"""Fixed-time CLF/CBF quadratic-program control for cooperative lane changes."""

__version__ = "0.1.0"
