"""Deterministic random streams.

Every stochastic choice in the toolkit draws from a Philox counter-based
generator keyed by ``(seed, stream, index)``, so results are reproducible
across platforms and independent of iteration order (e.g. per-class capping
uses ``index=class_id`` and can run in any order).
"""

from __future__ import annotations

import numpy as np

STREAM_CAP = 1          # per-class sample capping (index = class id)
STREAM_SUBSAMPLE = 2    # class-budget subsampling
STREAM_SHUFFLE = 3      # per-epoch batch shuffling (index = epoch)
STREAM_DROPOUT = 4      # dropout masks (index = global step)
STREAM_PROJ_INIT = 5    # projection-head weight init
STREAM_CLS_INIT = 6     # classifier weight init
STREAM_ZEROSHOT = 7     # zero-shot random linear map
STREAM_DATA = 8         # synthetic data generation (tests, benchmarks)

_MASK64 = (1 << 64) - 1


def philox(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Generator for the given (seed, stream, index) triple."""
    key = [int(seed) & _MASK64, int(stream) & _MASK64, int(index) & _MASK64]
    return np.random.Generator(np.random.Philox(seed=key))
