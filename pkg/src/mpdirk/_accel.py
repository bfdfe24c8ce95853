"""Numba acceleration switch.

Set ``MPDIRK_NUMBA=0`` in the environment before import to run every hot
kernel through its pure-numpy implementation instead of the jitted one.
"""

import os

_FLAG = os.environ.get("MPDIRK_NUMBA", "1").strip().lower()
USE_NUMBA = _FLAG not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a hard dependency
        USE_NUMBA = False


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
