"""Select the compiled kernels when available, else the numpy fallback.

Set ``LATTICE_COHERENCE_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
lyap_density_batch = _fallback.lyap_density_batch
em_chunk = _fallback.em_chunk

if os.environ.get("LATTICE_COHERENCE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        lyap_density_batch = _kernels.lyap_density_batch
        em_chunk = _kernels.em_chunk
