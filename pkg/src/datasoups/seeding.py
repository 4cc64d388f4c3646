import zlib

import numpy as np

_STAGE_CODES = {"joint": 1, "finetune_A": 2, "finetune_B": 3, "tta": 4, "analysis": 5,
                "kfold": 6, "synth": 7, "aug": 8, "mix": 9, "dropout": 10, "order": 11}


def key_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if key in _STAGE_CODES:
        return _STAGE_CODES[key]
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed, *keys):
    """Independent generator for (seed, key...); keys may be ints or strings."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + [key_int(k) for k in keys])
