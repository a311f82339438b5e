"""Hashing kernel backend selection.

The compiled Cython backend is preferred when it was built; otherwise the
NumPy implementation is used. Both produce bit-identical uint64 results.
Set ``DRIFTSKETCH_PURE=1`` to force the NumPy backend (used by the
benchmark and the backend-equivalence tests).
"""

import os

if os.environ.get("DRIFTSKETCH_PURE"):
    from .pure import hash_bins, match_counts, minhash_signature

    BACKEND = "pure"
else:
    try:
        from ._fast import hash_bins, match_counts, minhash_signature

        BACKEND = "compiled"
    except ImportError:
        from .pure import hash_bins, match_counts, minhash_signature

        BACKEND = "pure"

__all__ = ["BACKEND", "hash_bins", "match_counts", "minhash_signature"]
