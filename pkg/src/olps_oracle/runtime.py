"""Process-level performance settings."""

from __future__ import annotations

import ctypes
import ctypes.util
import logging

logger = logging.getLogger(__name__)

# glibc mallopt parameter ids
_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(mmap_threshold: int = 16 << 20, trim_threshold: int = 64 << 20) -> bool:
    """Keep mid-sized numpy temporaries on the heap instead of fresh mmaps.

    The GP fit allocates many n x n scratch arrays per objective call; with
    glibc defaults each one is mapped and unmapped, which can double the
    wall time. Returns False (and does nothing) off glibc.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, mmap_threshold) == 1
    ok &= mallopt(_M_TRIM_THRESHOLD, trim_threshold) == 1
    logger.debug("allocator tuning %s", "applied" if ok else "rejected")
    return bool(ok)
