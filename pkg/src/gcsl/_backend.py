"""Pick the compiled kernels (SGLD sampler, fused tractable loss) when available.

Set ``GCSL_BACKEND=python`` to force the numpy fallback.
"""

import os

from . import _kernels_py

kernels = _kernels_py
BACKEND = "python"

if os.environ.get("GCSL_BACKEND", "").lower() != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"
