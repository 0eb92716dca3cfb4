"""Weight checkpoints.

Format (version 1): a numpy ``.npz`` archive. Every parameter is stored
under its dotted name with its own shape; the reserved key
``__elp_checkpoint_version__`` holds the format version as a 0-d integer.
"""

from __future__ import annotations

import numpy as np

FORMAT_VERSION = 1
_VERSION_KEY = "__elp_checkpoint_version__"


def save_checkpoint(path, state):
    arrays = {name: np.asarray(value, dtype=np.float64) for name, value in state.items()}
    if _VERSION_KEY in arrays:
        raise KeyError(f"{_VERSION_KEY} is reserved")
    arrays[_VERSION_KEY] = np.array(FORMAT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as archive:
        if _VERSION_KEY not in archive.files:
            raise ValueError(f"{path} is not an ELP checkpoint")
        version = int(archive[_VERSION_KEY])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return {name: archive[name].copy() for name in archive.files if name != _VERSION_KEY}
