"""Counter-based random streams.

Every consumer (weight init, shuffling, augmentation, ...) derives its own
Philox stream from ``(seed, consumer name, counters...)``, so adding a new
consumer never shifts the numbers another one sees.
"""

import zlib

import numpy as np


def stream(seed: int, consumer: str, *counters: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(consumer.encode())] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
