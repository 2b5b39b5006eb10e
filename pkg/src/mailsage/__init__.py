"""Filter-then-verify social engineering detection over temporal email graphs."""

__version__ = "0.1.0"
