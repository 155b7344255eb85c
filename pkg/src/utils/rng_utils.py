import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def rng_for(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Independent generator for one named consumer of the run seed

    The same (seed, name, indices) always yields the same stream, and
    different names never share a stream.
    """
    spawn_key = (stream_key(name),) + tuple(int(i) for i in indices)
    sequence = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(sequence))
