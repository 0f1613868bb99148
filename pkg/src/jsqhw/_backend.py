"""Pick the compiled event loops when available, else the Python twin.

Set ``JSQHW_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("JSQHW_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "cython"
