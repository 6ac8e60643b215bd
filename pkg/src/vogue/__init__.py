"""Answer verbalization over knowledge-graph questions and logical forms."""

__version__ = "0.1.0"
