"""When to search the datastore.

``FIXED(i)`` retrieves at positions 1, 1+i, 1+2i, ...  ``GEOMETRIC(i_min, i_max)``
grows the interval as ``floor(min(i_max, i_min * 2**(r * t)))`` with
``r = (i_max / 2) / |x|``, starting from position 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import VaryExceedsStored


@dataclass(frozen=True)
class ScheduleConfig:
    mode: str = "geometric"  # "fixed" | "geometric"
    i: int = 1
    i_min: int = 2
    i_max: int = 16
    vary_chunk: bool = False

    def __post_init__(self):
        if self.mode not in ("fixed", "geometric"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "fixed" and self.i < 1:
            raise ValueError(f"interval must be >= 1, got {self.i}")
        if self.mode == "geometric" and not 1 <= self.i_min <= self.i_max:
            raise ValueError(f"need 1 <= i_min <= i_max, got {self.i_min}, {self.i_max}")

    @classmethod
    def fixed(cls, i: int, vary_chunk: bool = False) -> "ScheduleConfig":
        return cls(mode="fixed", i=i, vary_chunk=vary_chunk)

    @classmethod
    def geometric(cls, i_min: int, i_max: int, vary_chunk: bool = False) -> "ScheduleConfig":
        return cls(mode="geometric", i_min=i_min, i_max=i_max, vary_chunk=vary_chunk)

    def label(self) -> str:
        if self.mode == "fixed":
            return f"FIXED({self.i})"
        return f"GEOMETRIC({self.i_min},{self.i_max})"


def next_interval(t_k: int, i_min: int, i_max: int, src_len: int) -> int:
    rate = (i_max / 2.0) / src_len
    # past 2**64 the cap has long since won; clamping avoids float overflow
    exponent = min(rate * t_k, 64.0)
    return max(1, math.floor(min(i_max, i_min * 2.0 ** exponent)))


def interval_at(config: ScheduleConfig, t_k: int, src_len: int) -> int:
    if config.mode == "fixed":
        return config.i
    return next_interval(t_k, config.i_min, config.i_max, src_len)


def schedule_steps(config: ScheduleConfig, src_len: int, horizon: int) -> list[int]:
    steps = []
    t = 1
    while t <= horizon:
        steps.append(t)
        t += interval_at(config, t, src_len)
    return steps


def chunk_size_at(config: ScheduleConfig, c_default: int, i_k: int) -> int:
    """Chunk positions to read at a retrieval step whose interval is ``i_k``."""
    if not config.vary_chunk:
        return c_default
    if i_k > c_default:
        raise VaryExceedsStored(f"interval {i_k} exceeds stored chunk size {c_default}")
    return max(1, i_k)


class ScheduleState:
    """Per-sentence cursor: is position ``t`` a retrieval step?"""

    def __init__(self, config: ScheduleConfig, src_len: int):
        self.config = config
        self.src_len = max(1, src_len)
        self.last = 0
        self.next = 1

    def fires(self, t: int) -> bool:
        return t == self.next

    def advance(self, t: int) -> int:
        """Record a retrieval at ``t``; returns the interval to the next one."""
        interval = interval_at(self.config, t, self.src_len)
        self.last, self.next = t, t + interval
        return interval
