"""Exact piecewise-affine microstructures for the hexagonal-to-rhombic
differential inclusion, built by iterated convex integration."""
from . import analysis, covering, geometry, patches, render, scheme, strain
from .errors import MicrolamError

__all__ = ["analysis", "covering", "geometry", "patches", "render", "scheme", "strain",
           "MicrolamError"]
__version__ = "0.1.0"
