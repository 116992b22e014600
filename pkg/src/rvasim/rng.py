"""Counter-based random streams.

Every random draw in a run comes from ``stream(seed, subsystem,
attempt, ...)``: a Philox generator keyed by a SeedSequence over those
integers, with the trial's scenario seed as entropy. Streams never share state, so trials can run in any order or in
parallel and still reproduce bit for bit.
"""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    SCENARIO = 0
    CALIBRATION = 1
    NIR = 2
    ULTRASOUND = 3
    DETECTION = 4
    ARM = 5
    FORCE = 6
    ATTEMPT = 7


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
