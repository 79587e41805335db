"""Kernel backend selection.

The compiled extension ``trajmae._ckernels`` is used when importable; the
numpy/pure-Python module ``trajmae._kernels_py`` otherwise. Setting
``TRAJMAE_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("TRAJMAE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
rollout = _impl.rollout

__all__ = [
    "BACKEND",
    "attention_forward",
    "attention_backward",
    "layernorm_forward",
    "layernorm_backward",
    "rollout",
]
