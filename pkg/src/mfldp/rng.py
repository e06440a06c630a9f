"""Counter-based random streams keyed by (master seed, replica, purpose).

Each replica draws from its own Philox stream, so results do not depend on
how replicas are chunked across workers.
"""

from __future__ import annotations

import numpy as np

GENERATOR = "numpy.random.Philox(key=(seed, 16*replica + purpose))"

INIT = 0
DATA = 1
AUX = 2

_MASK64 = (1 << 64) - 1


def stream(seed: int, replica: int = 0, purpose: int = DATA) -> np.random.Generator:
    if replica < 0 or not 0 <= purpose < 16:
        raise ValueError("replica must be >= 0 and purpose in [0, 16)")
    key = np.array([int(seed) & _MASK64, (16 * int(replica) + purpose) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_atoms(probs: np.ndarray, size, gen: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of atom indices; zero-probability atoms are never emitted."""
    cdf = np.cumsum(np.asarray(probs, dtype=float))
    u = gen.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)
