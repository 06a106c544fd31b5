"""Invariant spectral foliations: series expansion, data fitting and analysis."""
from isf.foliation import Foliation, NormalFormParams, load_foliations, save_foliations
from isf.kernels import BACKEND
from isf.polyalg import MultiIndexSet, PolyMap, multiindex_set

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Foliation",
    "MultiIndexSet",
    "NormalFormParams",
    "PolyMap",
    "load_foliations",
    "multiindex_set",
    "save_foliations",
]
