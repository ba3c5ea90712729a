"""Building-occluded visibility at road intersections and accident-count regression."""

__version__ = "0.1.0"
