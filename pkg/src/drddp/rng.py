"""Seeded random-number streams.

One root seed drives a whole run. Every consumer (dataset draws, evaluation,
benchmark construction, tuning) gets its own labelled substream so that
changing how many numbers one consumer draws never shifts what another
consumer sees.
"""

from __future__ import annotations

import numpy as np

# Fixed label -> spawn-key slot. New consumers take a fresh slot; reusing one
# would silently correlate streams.
_STREAMS = {
    "dataset": 0,
    "forward": 1,
    "evaluation": 2,
    "benchmark": 3,
    "tuning": 4,
}


def substream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Generator for ``label`` (plus optional sub-indices) under ``seed``."""
    if label not in _STREAMS:
        raise KeyError(f"unknown stream label {label!r}; known: {sorted(_STREAMS)}")
    key = (_STREAMS[label],) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.default_rng(seq)


def stream_slot(label: str) -> int:
    """Spawn-key slot of a stream label (mostly for assertions in tests)."""
    return _STREAMS[label]
