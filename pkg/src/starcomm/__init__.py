"""Multi-robot map classification with bounded-degree communication graphs."""
from .config import RunConfig, desk_mnist_config

__version__ = "0.1.0"
__all__ = ["RunConfig", "desk_mnist_config", "__version__"]
