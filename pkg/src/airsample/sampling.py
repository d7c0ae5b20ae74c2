"""Duty-cycled sampling plans and their simulation by subsampling raw data."""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .core import RawSeries

MODES = ("consecutive", "uniform")
HOUR = 3600.0


class PlanError(ValueError):
    pass


class CoarseRawError(PlanError):
    pass


class Violation(str, enum.Enum):
    CONSECUTIVE_OVERRUN = "ConsecutiveOverrun"
    UNIFORM_NEEDS_ZERO_WARMUP = "UniformNeedsZeroWarmup"
    PERIOD_EXCEEDS_REF = "PeriodExceedsRef"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SamplingPlan:
    """Acquisition strategy: every ``t_sen`` s wake up, wait ``t_r`` s, take
    ``n_s`` measures of ``t_s`` s each (``consecutive``), or spread the
    ``n_s`` measures evenly over ``t_sen`` (``uniform``)."""

    t_s: float
    t_sen: float
    n_s: int
    t_r: float = 0.0
    mode: str = "consecutive"

    def __post_init__(self):
        if not self.t_s > 0:
            raise PlanError("t_s must be positive")
        if not self.t_sen > 0:
            raise PlanError("t_sen must be positive")
        if int(self.n_s) != self.n_s or self.n_s < 1:
            raise PlanError("n_s must be a positive integer")
        if self.t_r < 0:
            raise PlanError("t_r must be non-negative")
        if self.mode not in MODES:
            raise PlanError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "n_s", int(self.n_s))
        object.__setattr__(self, "t_s", float(self.t_s))
        object.__setattr__(self, "t_sen", float(self.t_sen))
        object.__setattr__(self, "t_r", float(self.t_r))

    @property
    def t_on(self) -> float:
        return self.t_r + self.n_s * self.t_s

    @classmethod
    def full_availability(cls, t_s: float) -> "SamplingPlan":
        """Always-on node logging every measure."""
        return cls(t_s=t_s, t_sen=t_s, n_s=1, t_r=0.0)

    def label(self) -> str:
        return f"{self.mode}/t_sen={self.t_sen:g}s/n_s={self.n_s}/t_r={self.t_r:g}s"


@dataclass(frozen=True)
class DutyCycleResult:
    dc: float
    t_on: float
    always_on: bool


def duty_cycle(plan: SamplingPlan) -> DutyCycleResult:
    t_on = plan.t_on
    always_on = t_on >= plan.t_sen
    return DutyCycleResult(dc=1.0 if always_on else t_on / plan.t_sen, t_on=t_on, always_on=always_on)


def validate_plan(plan: SamplingPlan, t_ref: float = HOUR) -> list[Violation]:
    """Feasibility violations of ``plan``; an empty list means the plan is valid."""
    out = []
    if plan.t_on > plan.t_sen:
        out.append(Violation.CONSECUTIVE_OVERRUN)
    if plan.mode == "uniform" and plan.t_r > 0:
        out.append(Violation.UNIFORM_NEEDS_ZERO_WARMUP)
    if plan.t_sen > t_ref:
        out.append(Violation.PERIOD_EXCEEDS_REF)
    return out


def is_runnable(plan: SamplingPlan, t_ref: float = HOUR) -> bool:
    """Valid, or only overrunning (which degenerates to an always-on node)."""
    return set(validate_plan(plan, t_ref)) <= {Violation.CONSECUTIVE_OVERRUN}


@dataclass(frozen=True)
class EnergyProfile:
    p_on: float
    p_sleep: float = 0.0

    def __post_init__(self):
        if not self.p_on >= self.p_sleep >= 0:
            raise ValueError("need p_on >= p_sleep >= 0")


def average_power(dc: float, p_on: float, p_sleep: float = 0.0) -> float:
    return dc * p_on + (1.0 - dc) * p_sleep


def energy_estimate(plan: SamplingPlan, profile: EnergyProfile) -> float:
    """Mean power draw (mW) of a two-state on/sleep node running ``plan``."""
    return average_power(duty_cycle(plan).dc, profile.p_on, profile.p_sleep)


def sample_offsets(plan: SamplingPlan) -> np.ndarray:
    """Requested sample times relative to each tick, in seconds."""
    j = np.arange(plan.n_s, dtype=np.float64)
    if plan.mode == "uniform":
        return j * (plan.t_sen / plan.n_s)
    warmup = 0.0 if duty_cycle(plan).always_on else plan.t_r
    return warmup + j * plan.t_s


@dataclass(frozen=True, eq=False)
class SampleWindow:
    tick_time: int
    times: np.ndarray
    values: np.ndarray

    @property
    def samples(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.times.tolist(), self.values))

    def __len__(self):
        return len(self.times)


class WindowSet(Sequence):
    """Windows produced by one :func:`simulate` run.

    Stored as a ``(n_ticks, n_s)`` matrix of raw record indices (-1 where
    the requested record does not exist) so the pipeline can stay
    vectorised; indexing yields :class:`SampleWindow` objects.
    """

    def __init__(self, raw: RawSeries, plan: SamplingPlan, ticks: np.ndarray, index: np.ndarray):
        self.raw = raw
        self.plan = plan
        self.ticks = ticks
        self.index = index
        ticks.setflags(write=False)
        index.setflags(write=False)

    def __len__(self):
        return len(self.ticks)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        idx = self.index[i]
        idx = idx[idx >= 0]
        return SampleWindow(int(self.ticks[i]), self.raw.times[idx], self.raw.values[idx])

    @property
    def channels(self) -> tuple[str, ...]:
        return self.raw.channels

    def matrix(self, channel: str | int) -> np.ndarray:
        """``(n_ticks, n_s)`` readings of one channel, NaN where absent."""
        j = channel if isinstance(channel, int) else self.raw.index_of(channel)
        out = np.full(self.index.shape, np.nan)
        ok = self.index >= 0
        out[ok] = self.raw.values[self.index[ok], j]
        return out

    def counts(self) -> np.ndarray:
        return np.count_nonzero(self.index >= 0, axis=1)


def tick_grid(start: int, end: int, t_sen: float, anchor: float = HOUR) -> np.ndarray:
    """Ticks every ``t_sen`` s from the anchor boundary at or before ``start``."""
    first = math.floor(start / anchor) * anchor
    n = int(math.floor((end - first) / t_sen)) + 1
    return first + t_sen * np.arange(n, dtype=np.float64)


def simulate(raw: RawSeries, plan: SamplingPlan) -> WindowSet:
    """Replay ``plan`` on ``raw`` by picking the records it would have measured.

    Each requested time snaps to the first raw record at or after it, and
    that record is accepted only if it lies less than one base period past
    the request and inside the tick's ``[tick, tick + t_sen)`` span. Absent
    records shrink the window; nothing is interpolated.
    """
    if raw.base_period > plan.t_s * (1 + 1e-9):
        raise CoarseRawError(
            f"raw base period {raw.base_period:g} s is coarser than t_s={plan.t_s:g} s"
        )
    if Violation.UNIFORM_NEEDS_ZERO_WARMUP in validate_plan(plan):
        raise PlanError("uniform sampling requires t_r = 0")
    if plan.n_s * plan.t_s > plan.t_sen * (1 + 1e-9):
        raise PlanError(f"{plan.n_s} measures of {plan.t_s:g} s do not fit in t_sen={plan.t_sen:g} s")
    if len(raw) == 0:
        return WindowSet(raw, plan, np.empty(0, np.int64), np.empty((0, plan.n_s), np.int64))

    ticks = tick_grid(raw.start_time, raw.end_time, plan.t_sen)
    requested = ticks[:, None] + sample_offsets(plan)[None, :]
    want = np.ceil(requested - 1e-9).astype(np.int64)
    pos = np.searchsorted(raw.times, want, side="left")
    inside = pos < len(raw)
    found = np.where(inside, raw.times[np.minimum(pos, len(raw) - 1)], np.iinfo(np.int64).max)
    ok = inside & (found - requested < raw.base_period) & (found < ticks[:, None] + plan.t_sen)
    index = np.where(ok, pos, -1).astype(np.int64)
    tick_times = np.round(ticks).astype(np.int64)
    return WindowSet(raw, plan, tick_times, index)
