"""Two-stage graph-structure alignment: quantized GNN codebook, then student alignment."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
