"""Physics-based inference of occluded rigid-object shapes from depth and pushes."""

__version__ = "0.1.0"
