"""Joint object and part segmentation with shared compositional parts."""

__version__ = "0.1.0"
