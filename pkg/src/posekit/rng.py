"""Counter-based random streams for reproducible data pipelines.

Every random decision in posekit is a pure function of (seed, stream_index,
label): the same key always produces the same draws, no matter how records
are scheduled across workers. Streams are backed by Philox, a counter-based
generator, keyed by (seed, stream_index) with the label placed in the high
counter word so labeled substreams never overlap.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Substream labels. Distinct labels give statistically independent draws for
# the same (seed, stream_index).
LABEL_MODALITY = 1
LABEL_SPARSE = 2
LABEL_MONTE_CARLO = 3


def stream(seed: int, stream_index: int, label: int = 0) -> np.random.Generator:
    """Fresh generator for one (seed, stream_index, label) key."""
    key = np.array([seed & _MASK64, stream_index & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, label & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
