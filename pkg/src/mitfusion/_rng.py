import zlib

import numpy as np


def stage_rng(seed, stage) -> np.random.Generator:
    """Independent generator for one named stage of a seeded run.

    Keyed on the stage name rather than call order, so adding a stage does
    not shift the random numbers any other stage sees.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))]))


def stage_seed(seed, stage) -> int:
    """A 32-bit integer seed for estimators that take ``random_state``."""
    return int(stage_rng(seed, stage).integers(0, 2**31 - 1))
