"""Hierarchical temporal view sampling: anchored global/local crops.

Two long global crops are drawn per sample; shorter local crops are drawn
strictly inside each global interval so every pair of views overlaps in time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import SkeletonSequence, resample_linear
from .errors import ValidationError


class ViewKind(enum.Enum):
    GLOBAL_1 = "global_1"
    GLOBAL_2 = "global_2"
    LOCAL_32 = "local_32"
    LOCAL_16 = "local_16"
    LOCAL_8 = "local_8"


_LOCAL_KINDS = {32: ViewKind.LOCAL_32, 16: ViewKind.LOCAL_16, 8: ViewKind.LOCAL_8}


@dataclass(frozen=True)
class Interval:
    """Inclusive frame interval [start, end] into a source sequence."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValidationError(f"bad interval [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def contains(self, other: "Interval") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass(eq=False)
class View:
    sequence: SkeletonSequence
    interval: Interval
    target_frames: int
    kind: ViewKind

    def __post_init__(self):
        if self.sequence.frames != self.target_frames:
            raise ValidationError(
                f"view has {self.sequence.frames} frames, expected {self.target_frames}"
            )


@dataclass
class ViewConfig:
    """Crop counts and interval-ratio ranges for the view hierarchy."""

    global_frames: int = 64
    global_ratio: tuple[float, float] = (0.5, 1.0)
    # (target_frames, ratio_lo, ratio_hi) per local resolution
    local_specs: tuple[tuple[int, float, float], ...] = (
        (32, 0.35, 0.70),
        (16, 0.15, 0.40),
        (8, 0.05, 0.20),
    )
    crops_per_spec: int = 2

    def __post_init__(self):
        lo, hi = self.global_ratio
        if not (0 < lo <= hi <= 1):
            raise ValidationError("global_ratio must satisfy 0 < lo <= hi <= 1")
        for frames, rlo, rhi in self.local_specs:
            if frames < 1:
                raise ValidationError("local target frames must be >= 1")
            if not (0 < rlo <= rhi <= 1):
                raise ValidationError("local ratios must satisfy 0 < lo <= hi <= 1")


@dataclass(eq=False)
class ViewSet:
    """2 global views plus crops_per_spec locals per resolution per anchor."""

    global_1: View
    global_2: View
    locals_1: list[View] = field(default_factory=list)
    locals_2: list[View] = field(default_factory=list)

    def all_views(self) -> list[View]:
        return [self.global_1, self.global_2, *self.locals_1, *self.locals_2]


def sample_global_interval(
    total_frames: int, rng: np.random.Generator, lo: float = 0.5, hi: float = 1.0
) -> Interval:
    """An interval covering a uniform fraction in [lo, hi] of the source."""
    if total_frames < 2:
        raise ValidationError("need at least 2 source frames for a global interval")
    u = rng.uniform(lo, hi)
    length = int(np.clip(round(u * total_frames), 1, total_frames))
    start = int(rng.integers(0, total_frames - length + 1))
    return Interval(start, start + length - 1)


def sample_local_interval(
    anchor: Interval, ratio_lo: float, ratio_hi: float, rng: np.random.Generator
) -> Interval:
    """A sub-interval of the anchor whose length is a uniform fraction of it."""
    if not (0 < ratio_lo <= ratio_hi <= 1):
        raise ValidationError("ratios must satisfy 0 < lo <= hi <= 1")
    p = rng.uniform(ratio_lo, ratio_hi)
    length = max(1, round(p * anchor.length))
    start = anchor.start + int(rng.integers(0, anchor.length - length + 1))
    return Interval(start, start + length - 1)


def extract_view(
    seq: SkeletonSequence, interval: Interval, target_frames: int, kind: ViewKind
) -> View:
    """Uniformly subsample (or interpolate up) the interval to target_frames.

    Both interval endpoints are always represented exactly.
    """
    if interval.end >= seq.frames:
        raise ValidationError(f"interval {interval} exceeds sequence length {seq.frames}")
    if target_frames < 1:
        raise ValidationError("target_frames must be >= 1")
    if interval.length >= target_frames:
        idx = np.rint(np.linspace(interval.start, interval.end, target_frames)).astype(np.int64)
        sub = SkeletonSequence(seq.coords[idx])
    else:
        clip = SkeletonSequence(seq.coords[interval.start : interval.end + 1])
        sub = resample_linear(clip, target_frames)
    return View(sequence=sub, interval=interval, target_frames=target_frames, kind=kind)


def make_view_set(
    seq: SkeletonSequence, rng: np.random.Generator, cfg: ViewConfig | None = None
) -> ViewSet:
    """Draw the full anchored view hierarchy for one sample."""
    cfg = cfg or ViewConfig()
    g1_iv = sample_global_interval(seq.frames, rng, *cfg.global_ratio)
    g2_iv = sample_global_interval(seq.frames, rng, *cfg.global_ratio)
    g1 = extract_view(seq, g1_iv, cfg.global_frames, ViewKind.GLOBAL_1)
    g2 = extract_view(seq, g2_iv, cfg.global_frames, ViewKind.GLOBAL_2)

    def locals_for(anchor: Interval) -> list[View]:
        out = []
        for frames, rlo, rhi in cfg.local_specs:
            kind = _LOCAL_KINDS.get(frames, ViewKind.LOCAL_8)
            for _ in range(cfg.crops_per_spec):
                iv = sample_local_interval(anchor, rlo, rhi, rng)
                out.append(extract_view(seq, iv, frames, kind))
        return out

    return ViewSet(
        global_1=g1,
        global_2=g2,
        locals_1=locals_for(g1_iv),
        locals_2=locals_for(g2_iv),
    )
