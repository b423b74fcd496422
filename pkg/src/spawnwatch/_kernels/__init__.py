"""Hot numeric kernels with backend selection at import time.

The compiled Cython extension is preferred when importable; the numpy
fallback has identical semantics. ``SPAWNWATCH_KERNELS=python|native``
forces a backend (``native`` raises if the extension is unavailable).
"""

from __future__ import annotations

import os

from . import fallback
from .fallback import ACTION_ADVANCE, ACTION_NONE, ACTION_REMOVE

_FORCED = os.environ.get("SPAWNWATCH_KERNELS", "auto").lower()

if _FORCED == "python":
    _impl = fallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        if _FORCED == "native":
            raise
        _impl = fallback
        BACKEND = "python"

step_actions = _impl.step_actions
greedy_match = _impl.greedy_match


def available_backends() -> dict[str, object]:
    """All importable kernel modules keyed by backend name."""
    backends: dict[str, object] = {"python": fallback}
    try:
        from . import _native

        backends["native"] = _native
    except ImportError:
        pass
    return backends


__all__ = [
    "ACTION_ADVANCE",
    "ACTION_NONE",
    "ACTION_REMOVE",
    "BACKEND",
    "available_backends",
    "greedy_match",
    "step_actions",
]
