"""Co-augmentation of graph topology and node attributes for semi-supervised
node classification."""
from .graph import GraphFormatError, LabelSet, NormalizedAdjacency, SparseGraph, normalize, spmm
from .pipeline import RunConfig, augment, run

__version__ = "0.1.0"

__all__ = ["GraphFormatError", "LabelSet", "NormalizedAdjacency", "RunConfig", "SparseGraph",
           "augment", "normalize", "run", "spmm", "__version__"]
