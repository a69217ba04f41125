"""Numeric kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the NumPy
reference implementations take over with identical signatures and semantics.
Set PROJDIFF_KERNELS=reference to force the fallback (useful for parity
debugging and benchmarks).
"""

import os

from . import _reference

BACKEND = "reference"
_impl = _reference

if os.environ.get("PROJDIFF_KERNELS", "").lower() != "reference":
    try:
        from . import _speedups as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def pairwise_clearance(pos, dmin):
    return _impl.pairwise_clearance(pos, dmin)


def obstacle_clearance(pos, centers, radii):
    return _impl.obstacle_clearance(pos, centers, radii)


def ngram_score(rows, grams, weights):
    return _impl.ngram_score(rows, grams, weights)
