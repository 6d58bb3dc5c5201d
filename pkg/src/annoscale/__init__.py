"""Multi-scale embedding engine for interactive bulk annotation of video features."""

__version__ = "0.1.0"
