"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it imports; otherwise (or when
``RECLOSS_PURE_PYTHON=1`` is set) the numpy implementation in ``_fallback``
is selected. ``get_backend`` returns either module explicitly so the two can
be compared in tests and benchmarks.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _fallback

logger = logging.getLogger(__name__)

FAMILY_CODES = {
    "sampled_softmax": 0,
    "infonce": 1,
    "debiased_infonce": 2,
    "mine": 3,
    "mine_plus": 4,
    "bpr": 5,
    "mse": 6,
    "ccl": 7,
    "debiased_mse": 8,
    "debiased_ccl": 9,
}

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS: dict[str, ModuleType] = {"numpy": _fallback}
if _core is not None:
    _BACKENDS["cython"] = _core

if _core is not None and os.environ.get("RECLOSS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
else:
    BACKEND = "numpy"
    if _core is None:
        logger.debug("compiled kernels unavailable; using numpy fallback")


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` (default: the import-time selection)."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None
