"""Speaker-verification backend and evaluation toolkit.

Feature extraction, pooling kernels, training-recipe math, embedding
post-processing, cosine scoring, detection metrics, and channel-simulation
planning, each usable as a library module or through the `svkit` CLI.
"""

from .errors import ContractError, FormatError

__version__ = "0.1.0"

__all__ = ["ContractError", "FormatError", "__version__"]
