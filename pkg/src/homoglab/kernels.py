"""Hot-loop kernels with a compiled backend selected at import.

The Cython extension ``_ckernels`` is used when it was built; otherwise (or
when ``HOMOGLAB_PURE_PYTHON=1``) the NumPy versions in ``_kernels_py`` take
over.  ``BACKEND`` names the active choice.
"""

import os

from . import _kernels_py

if os.environ.get("HOMOGLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

divform_apply_diag = _impl.divform_apply_diag
paint_balls = _impl.paint_balls

__all__ = ["BACKEND", "divform_apply_diag", "paint_balls"]
