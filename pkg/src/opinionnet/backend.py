"""Select the compiled kernels when available, the numpy fallback otherwise.

Set ``OPINIONNET_BACKEND=numpy`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("OPINIONNET_BACKEND", "").lower() == "numpy":
        raise ImportError("numpy backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

kernels = _compiled if _compiled is not None else _fallback
NAME = kernels.NAME


def get(name: str | None = None):
    """Kernel module by name ('compiled' or 'numpy'); default is the active one."""
    if name is None:
        return kernels
    if name == "numpy":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    return (["compiled"] if _compiled is not None else []) + ["numpy"]
