"""Random telegraph magnetic noise and interrupted-rf gate schedules.

Randomness comes from numpy's Philox4x64-10 counter-based bit generator
seeded with a single 64-bit integer, so a seed reproduces the same flip
times on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TelegraphProcess",
    "RfGateSchedule",
    "sample_telegraph",
    "effective_eps",
    "make_rng",
]

INTERVAL_SPREAD = 0.25  # flips are separated by T_R * U(1 - 0.25, 1 + 0.25)


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class TelegraphProcess:
    """Symmetric two-level signal ``+-Delta0`` switching at ``flip_times``.

    The value is piecewise constant and right-continuous: at a flip time it
    already takes the new value.
    """

    Delta0: float
    T_R: float
    seed: int
    t_end: float
    initial_sign: int
    flip_times: np.ndarray = field(repr=False)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.flip_times, t, side="right")
        v = self.Delta0 * self.initial_sign * np.where(k % 2 == 0, 1.0, -1.0)
        return v if v.ndim else float(v)

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.flip_times, prepend=0.0)

    def to_dict(self) -> dict:
        return {"Delta0": self.Delta0, "T_R": self.T_R, "seed": self.seed, "t_end": self.t_end,
                "initial_sign": self.initial_sign, "flip_times": self.flip_times.tolist()}


def sample_telegraph(Delta0: float, T_R: float, seed: int, t_end: float) -> TelegraphProcess:
    """Draw a telegraph realisation on ``[0, t_end]``.

    The first value's sign and the i.i.d. inter-flip intervals, uniform on
    ``[0.75 T_R, 1.25 T_R]``, all come from the seeded generator.
    """
    if not Delta0 >= 0:
        raise ValueError("Delta0 must be >= 0")
    if not (t_end > 0 and T_R > 0):
        raise ValueError("t_end and T_R must be positive")
    rng = make_rng(seed)
    sign = 1 if rng.integers(0, 2) == 0 else -1
    lo, hi = (1 - INTERVAL_SPREAD) * T_R, (1 + INTERVAL_SPREAD) * T_R
    chunk = int(t_end / T_R) + 16
    times = []
    t = 0.0
    while t < t_end:
        steps = rng.uniform(lo, hi, size=chunk)
        cum = t + np.cumsum(steps)
        times.append(cum)
        t = cum[-1]
    flips = np.concatenate(times)
    flips = flips[flips < t_end]
    return TelegraphProcess(float(Delta0), float(T_R), int(seed), float(t_end), sign, flips)


@dataclass(frozen=True)
class RfGateSchedule:
    """Windows ``(t_start, duration)`` during which the rf field is off.

    ``mode`` records how the schedule was built. With
    ``anchor='extremum'`` the windows are nominal: the dynamics driver
    opens each one at the first sampled extremum of <x> at or after its
    nominal start.
    """

    windows: tuple = ()
    mode: str = "none"
    period: float | None = None
    anchor: str = "fixed"

    def __post_init__(self):
        wins = tuple((float(s), float(d)) for s, d in self.windows)
        object.__setattr__(self, "windows", wins)
        if self.anchor not in ("fixed", "extremum"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        prev_end = -math.inf
        for start, dur in wins:
            if not dur > 0:
                raise ValueError("gate durations must be positive")
            if start < prev_end:
                raise ValueError("gate windows must be sorted and non-overlapping")
            prev_end = start + dur

    @classmethod
    def pi_pulse(cls, t_start: float) -> "RfGateSchedule":
        """Half a CT period without rf: an effective pi pulse."""
        return cls(((t_start, math.pi),), mode="pi_pulse")

    @classmethod
    def half_pi_pulse(cls, t_start: float) -> "RfGateSchedule":
        """A quarter CT period without rf: an effective pi/2 pulse."""
        return cls(((t_start, math.pi / 2),), mode="half_pi_pulse")

    @classmethod
    def periodic(cls, T_i: float, t_end: float, duration: float = math.pi,
                 t_first: float = 0.0, anchor: str = "fixed") -> "RfGateSchedule":
        if not T_i > duration:
            raise ValueError("interruption period must exceed the window duration")
        n = math.ceil((t_end - t_first) / T_i - 1e-12)
        wins = tuple((t_first + k * T_i, duration) for k in range(max(n, 0)))
        return cls(wins, mode="periodic", period=T_i, anchor=anchor)

    def active(self, t):
        t = np.asarray(t, dtype=float)
        on = np.zeros(t.shape, dtype=bool)
        for start, dur in self.windows:
            on |= (t >= start) & (t < start + dur)
        return on if on.ndim else bool(on)

    def edges(self) -> list[float]:
        out = []
        for start, dur in self.windows:
            out.extend((start, start + dur))
        return out

    def to_dict(self) -> dict:
        return {"mode": self.mode, "period": self.period, "anchor": self.anchor,
                "windows": [list(w) for w in self.windows]}


def effective_eps(t, base_eps: float, schedule: RfGateSchedule | None):
    """rf coupling at time ``t``: 0 inside gate windows, ``base_eps`` outside."""
    on = schedule.active(t) if schedule is not None else np.zeros(np.shape(t), dtype=bool)
    out = np.where(on, 0.0, float(base_eps))
    return out if out.ndim else float(out)
