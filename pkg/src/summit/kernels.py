"""Backend selection for the loop kernels.

The compiled extension is used when it imports; setting
``SUMMIT_KERNELS=python`` forces the pure-Python fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("SUMMIT_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None and _active is compiled_backend else "python"

KIND_NUMERICAL = _pykernels.KIND_NUMERICAL
KIND_MODE = _pykernels.KIND_MODE
KIND_LAST = _pykernels.KIND_LAST

summarize_rows = _active.summarize_rows
concordance_counts = _active.concordance_counts
