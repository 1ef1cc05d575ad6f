import numpy as np


def make_rng(seed):
    """Seeded generator backed by Philox, a counter-based bit generator.

    Philox output is specified independently of platform and numpy build, so
    instances generated from the same seed are bit-identical everywhere.
    """
    return np.random.Generator(np.random.Philox(int(seed)))
