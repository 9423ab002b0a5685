"""Counter-based random streams.

Every row owns a fixed block of ``WORDS_PER_ROW`` 64-bit words from a Philox
stream keyed by the seed, so the draws of row ``i`` do not depend on ``n`` or
on how rows are split across workers.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

WORDS_PER_ROW = 8
_BLOCKS_PER_ROW = WORDS_PER_ROW // 4


def row_uniforms(seed: int, start: int, stop: int) -> np.ndarray:
    """Open-interval uniforms of shape ``(stop - start, WORDS_PER_ROW)``."""
    if stop < start or start < 0:
        raise ValueError("invalid row range")
    bitgen = Philox(key=int(seed))
    bitgen.advance(_BLOCKS_PER_ROW * start)
    raw = bitgen.random_raw((stop - start) * WORDS_PER_ROW)
    # 53-bit mantissa, shifted by half a step so 0 and 1 are never produced
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u.reshape(stop - start, WORDS_PER_ROW)


def row_uniforms_blocked(seed: int, n: int, block: int = 1 << 16) -> np.ndarray:
    parts = [row_uniforms(seed, lo, min(lo + block, n)) for lo in range(0, n, block)]
    if not parts:
        return np.empty((0, WORDS_PER_ROW))
    return np.vstack(parts)


def std_normal(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF transform of open-interval uniforms."""
    return ndtri(u)


def derive_seed(base_seed: int, *path: int) -> int:
    """Deterministic sub-seed for replicate/restart ``path`` under ``base_seed``."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, *(int(p) for p in path)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def generator(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(Philox(key=derive_seed(seed, *path)))
