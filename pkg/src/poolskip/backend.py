"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy fallback in ``_kernels_py`` is used. Setting ``POOLSKIP_BACKEND`` to
``python`` or ``compiled`` forces a choice (``compiled`` raises if the
extension is missing).
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_choice = os.environ.get("POOLSKIP_BACKEND", "").strip().lower()
if _choice == "python":
    kernels = _kernels_py
elif _choice == "compiled":
    if _compiled is None:
        raise ImportError("POOLSKIP_BACKEND=compiled but poolskip._kernels is not built")
    kernels = _compiled
elif _choice in ("", "auto"):
    kernels = _compiled if _compiled is not None else _kernels_py
else:
    raise ImportError(f"unknown POOLSKIP_BACKEND {_choice!r}")

NAME = "compiled" if kernels is _compiled else "python"


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get(name):
    if name == "python":
        return _kernels_py
    if name == "compiled" and _compiled is not None:
        return _compiled
    raise ValueError(f"backend {name!r} is not available")
