"""Small shared helpers: deterministic formatting and thread budgeting."""

from __future__ import annotations

import math
import os


def fmt_float(value: float) -> str:
    """Shortest representation that round-trips the float; blank for NaN."""
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def fmt_sig(value: float, digits: int = 6) -> str:
    """Fixed significant-digit formatting for SVG coordinates."""
    return format(float(value), f".{digits}g")


def thread_count() -> int:
    """Worker budget for replicate/candidate parallelism.

    RVF_THREADS caps it; defaults to the machine's cores, at most 8.
    """
    env = os.environ.get("RVF_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, min(8, os.cpu_count() or 1))
