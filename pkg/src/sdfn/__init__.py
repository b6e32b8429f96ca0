"""Dual-view (whole image + lung crop) fusion classifier on a small numpy autodiff engine."""
from .labels import NUM_CLASSES, PATHOLOGIES

__version__ = "0.1.0"

__all__ = ["NUM_CLASSES", "PATHOLOGIES", "__version__"]
