"""Deterministic RNG streams, keyed by (seed entropy, stream id, step).

Every random draw in a trial comes from a named stream so that control
sampling, planner disturbances, belief resampling, environment noise and
scenario generation can be varied independently.  In particular the
causality check perturbs only the environment stream at future steps and
expects the planner output to be bit-identical.
"""

from __future__ import annotations

import numpy as np

STREAM_CONTROL = 0
STREAM_DISTURBANCE = 1
STREAM_DOWNSAMPLE = 2
STREAM_ENV = 3
STREAM_SCENARIO = 4
STREAM_PARTICLES = 5


def stream_rng(entropy: int | tuple[int, ...], stream: int, step: int = 0) -> np.random.Generator:
    """Fresh generator for (entropy, stream, step); same inputs, same draws."""
    if isinstance(entropy, int):
        entropy = (entropy,)
    return np.random.default_rng(np.random.SeedSequence(tuple(entropy) + (stream, step)))
