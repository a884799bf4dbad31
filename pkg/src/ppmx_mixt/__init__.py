"""Covariate-dependent random partition models built on NGG cohesions."""
from .core import (ChainState, ConjClusterParams, Family, MixedCovariateMatrix, NggParams, Partition,
                   RecClusterParams, RecurrentDataset, RegressionState, SimilarityConfig)

__version__ = "0.1.0"

__all__ = [
    "ChainState", "ConjClusterParams", "Family", "MixedCovariateMatrix", "NggParams", "Partition",
    "RecClusterParams", "RecurrentDataset", "RegressionState", "SimilarityConfig", "__version__",
]
