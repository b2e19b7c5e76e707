"""graphmoe: a CPU-only mixture of graph neural network models.

A pool of structurally diverse GNN experts is routed per node by a
linear-attention gate with learnable activation thresholds, trained with
straight-through gradients, and thinned over time by importance-based
pruning. A companion theory lab validates the concentration bound that
motivates pruning, plus its count-sketch machinery.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GraphMoeError,
    NumericalError,
    ShapeError,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "GraphMoeError",
    "NumericalError",
    "ShapeError",
    "__version__",
]
