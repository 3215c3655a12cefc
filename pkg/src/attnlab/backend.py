"""Backend selection: compiled kernels when available, numpy otherwise.

The two backends are bit-for-bit interchangeable (enforced by the parity
test suite). ATTNLAB_BACKEND=python|native forces a choice; by default the
compiled extension is used when importable.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pure

_FORCED = os.environ.get("ATTNLAB_BACKEND", "").strip().lower()

_native = None
if _FORCED != "python":
    try:
        from . import _native  # type: ignore[attr-defined]
    except ImportError:
        _native = None
        if _FORCED == "native":
            raise ImportError(
                "ATTNLAB_BACKEND=native but the compiled extension is not "
                "built; run `pip install -e . --no-build-isolation`"
            )

active: ModuleType = _native if _native is not None else _pure


def available_backends() -> dict[str, ModuleType]:
    out = {"python": _pure}
    if _native is not None:
        out["native"] = _native
    return out


def backend_name() -> str:
    return active.NAME
