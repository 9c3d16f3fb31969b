"""Random stirring on rooted d-ary trees.

Simulates the cyclic-time meander over Poisson bar collections, extracts
the induced stirring permutation, detects the pivotality/crossing event
family, and estimates boundary-hitting probabilities with a reproducible
Monte Carlo layer.
"""

from stirtree.tree import TreeShape, ROOT, CapacityError
from stirtree.bars import Bar, BarCollection, LazyPoissonBars, LocationSet

__all__ = [
    "TreeShape",
    "ROOT",
    "CapacityError",
    "Bar",
    "BarCollection",
    "LazyPoissonBars",
    "LocationSet",
]

__version__ = "0.1.0"
