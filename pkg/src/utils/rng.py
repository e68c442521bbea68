import hashlib
from typing import Union

import numpy as np


def _stream_key(stream: Union[int, str]) -> int:
    if isinstance(stream, int):
        return stream & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, stream: Union[int, str] = 0) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, stream).

    Philox output depends only on the key and counter, so the same seed gives the
    same numbers on every platform and independent streams never overlap.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, _stream_key(stream)]
    return np.random.Generator(np.random.Philox(key=key))
