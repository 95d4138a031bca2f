"""Video-level single-object tracker with state-space context propagation."""

__version__ = "0.1.0"
