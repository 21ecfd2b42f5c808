"""Counter-based random streams keyed by (root seed, integer path)."""

from __future__ import annotations

import numpy as np

# top-level key namespaces so independent consumers never share a stream
AUGMENT = 0
SHUFFLE = 1
INIT = 2
TRAIN_AUGMENT = 3
SIMULATE = 4
DATASET = 5


def derive_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *keys)``.

    The key path is hashed through ``SeedSequence`` so nearby keys give
    unrelated streams; the same inputs always give the same stream.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def stream_id(seed: int, *keys: int) -> str:
    return ":".join(str(int(k)) for k in (seed, *keys))
