from __future__ import annotations

import hashlib
import json
import logging
import math
from typing import Any, Sequence

import numpy

logger = logging.getLogger(__name__)


def wrap_angle(angle: float) -> float:
    """Map an angle in radians onto [-pi, pi)."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def random_stream(seed: int, *keys: int) -> numpy.random.Generator:
    """Independent PCG64 stream for `(seed, *keys)`.

    The same integers always give the same stream, so a single trial of a sweep can be
    regenerated from the master seed and its trial index alone.
    """
    entropy = [int(seed)] + [int(key) for key in keys]
    if any(value < 0 for value in entropy):
        raise ValueError(f"seed and stream keys must be non-negative: {entropy}")
    return numpy.random.Generator(numpy.random.PCG64(numpy.random.SeedSequence(entropy)))


def format_float(value: float) -> str:
    return repr(float(value))


def stable_hash(obj: Any) -> str:
    dumped = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.md5(dumped.encode("utf-8")).hexdigest()


def l1_norm(vector: Sequence[float] | numpy.ndarray) -> float:
    return float(numpy.sum(numpy.abs(numpy.asarray(vector, dtype=float))))
