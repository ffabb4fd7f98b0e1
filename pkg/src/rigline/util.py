"""Small shared helpers: seed derivation and atomic file writes."""

import os
import tempfile

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Derive a child seed from a master seed and a tuple of tags.

    Deterministic across runs and platforms; distinct tags give independent
    streams. Tags may be ints or short strings.
    """
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            entropy.extend(t.encode("utf-8"))
        else:
            entropy.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a temp file + rename so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_rigline_")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
