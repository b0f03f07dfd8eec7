"""glibc allocator tuning for the training loop.

Autodiff tapes allocate and free many mid-sized arrays per update. With glibc's
default thresholds those blocks are handed back to the OS and page-faulted in
again on the next allocation, which costs more than the arithmetic on small
machines. Raising the mmap and trim thresholds keeps them on the heap.
"""

import ctypes
import ctypes.util
import logging

log = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator(mmap_threshold=256 << 20, trim_threshold=1 << 30):
    """Apply the thresholds once per process. Returns True if glibc accepted them."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        log.debug("mallopt unavailable; allocator left at defaults")
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, mmap_threshold) == 1 and mallopt(_M_TRIM_THRESHOLD, trim_threshold) == 1
    _done = ok
    return ok
