"""Named, counter-based random streams derived from one master seed.

Every piece of randomness in the package is drawn from a stream addressed by a
(seed, *path) label, e.g. ``substream(seed, "scdf", "batch", step, task_id)``.
Streams with different labels are statistically independent and reproducible
across platforms, which keeps whole experiment runs replayable from one seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "sample_index"]


def substream(seed: int, *path: object) -> np.random.Generator:
    """Return an independent Philox generator for the given (seed, path) label."""
    label = "/".join(repr(part) for part in path)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    spawn_key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    entropy = int(seed) % (1 << 128)
    seq = np.random.SeedSequence(entropy=entropy, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector by inverse-CDF lookup."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, probs.size - 1)
