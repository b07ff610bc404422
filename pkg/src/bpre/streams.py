"""Reproducible counter-based random streams and chunked reduction.

Work is cut into fixed-size sample chunks. Chunk i of a labeled task draws
from Philox keyed by sha256(seed|label) with the counter's high word set to
i, so every chunk is an independent, replayable stream no matter which
worker runs it or in what order. Batch parallelism only groups chunks for
execution; results are always reduced in chunk order, which is what makes
output bytes independent of the batch count.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "philox4x64 key=sha256(seed|label)[:16] counter=chunk<<192"

# samples per chunk; fixed so the work decomposition never depends on the
# batch count
CHUNK = 4096


def _key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}|{label}".encode()).digest()[:16]
    return int.from_bytes(digest, "little")


def stream(seed: int, label: str, chunk: int = 0) -> np.random.Generator:
    """Generator for one (seed, label, chunk) triple."""
    bits = np.random.Philox(key=_key(seed, label), counter=int(chunk) << 192)
    return np.random.Generator(bits)


def split_streams(seed: int, batch_index: int, label: str = "batch"):
    """Stream handle for one batch; distinct and reproducible per index."""
    return stream(seed, label, batch_index)


def chunk_sizes(total: int, chunk: int = CHUNK):
    """Split total samples into fixed chunks (last one ragged)."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def chunked_map(seed: int, label: str, total: int, fn, batches: int = 1,
                chunk: int = CHUNK):
    """Run fn(rng, size, chunk_index) over all chunks; return results in
    chunk order.

    Chunks execute batch-major (batch b takes chunks b, b+batches, ...) so
    a different batch count genuinely reorders execution; the returned list
    is in chunk order regardless, and each chunk's stream depends only on
    (seed, label, chunk_index).
    """
    if batches < 1:
        raise ValueError(f"batches must be >= 1, got {batches}")
    sizes = chunk_sizes(total, chunk)
    out = [None] * len(sizes)
    for b in range(batches):
        for c in range(b, len(sizes), batches):
            out[c] = fn(stream(seed, label, c), sizes[c], c)
    return out
