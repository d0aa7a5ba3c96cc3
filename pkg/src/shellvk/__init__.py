"""shellvk: verification suite for thin-shell dimension reduction.

Solves the 2D generalized von Karman limit model on a parametric
midsurface, minimizes the 3D shell elastic energy over a decreasing
thickness series, and extracts rescaled equilibria to measure convergence
of the 3D critical points to 2D critical points.
"""

__version__ = "0.1.0"
