"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. ``SSCNET_BACKEND=python`` forces the fallback.
"""

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_KERNELS = {"python": _pykernels}
if _ckernels is not None:
    _KERNELS["compiled"] = _ckernels

if os.environ.get("SSCNET_BACKEND", "").lower() in ("python", "numpy"):
    DEFAULT = "python"
elif _ckernels is not None:
    DEFAULT = "compiled"
else:
    log.warning("compiled kernels unavailable, using the numpy fallback")
    DEFAULT = "python"


def available() -> list[str]:
    return sorted(_KERNELS)


def kernels(name: str | None = None):
    name = DEFAULT if name is None else name
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}") from None
