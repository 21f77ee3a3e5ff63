"""H2 coherence of spatially invariant consensus and vehicular formations on toric lattices."""
from ._backend import BACKEND
from .lattice import LocalArray, PreconditionError
from .models import Kind, ModelSpec

__version__ = "0.1.0"
__all__ = ["BACKEND", "Kind", "LocalArray", "ModelSpec", "PreconditionError", "__version__"]
