"""Semantic tube masking over the skeletal-temporal token lattice.

Masks are built by repeatedly stamping rectangles: a chain-contiguous run of
joints from one anatomical group crossed with a contiguous run of temporal
tokens, with the run length chosen so each stamp covers a roughly constant
token area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .data import SkeletonTopology
from .errors import ValidationError


@dataclass(frozen=True)
class TokenGrid:
    """Token lattice: temporal patches x joint patches."""

    temporal: int
    joints: int

    def __post_init__(self):
        if self.temporal < 1 or self.joints < 1:
            raise ValidationError(f"bad token grid {self.temporal}x{self.joints}")

    @property
    def size(self) -> int:
        return self.temporal * self.joints


class TubeStep(NamedTuple):
    group_index: int
    chain_start: int  # offset into the group's chain-ordered joint list
    width: int
    t_start: int
    duration: int
    area: float  # sampled token budget; duration = clamp(round(area/width), 1, T')


@dataclass
class MaskConfig:
    ratio_lo: float = 0.5
    ratio_hi: float = 0.9
    area_min: int = 8
    area_max_fraction: float = 0.5
    p_mask_global: float = 1.0
    p_mask_local: float = 0.5
    strategy: str = "tube"  # "tube" | "independent"
    stall_limit: int = 32

    def __post_init__(self):
        if not (0 < self.ratio_lo <= self.ratio_hi < 1):
            raise ValidationError("mask ratios must satisfy 0 < lo <= hi < 1")
        if self.area_min < 1:
            raise ValidationError("area_min must be >= 1")
        if not (0 < self.area_max_fraction <= 1):
            raise ValidationError("area_max_fraction must be in (0, 1]")
        if self.strategy not in ("tube", "independent"):
            raise ValidationError(f"unknown mask strategy {self.strategy!r}")
        for p in (self.p_mask_global, self.p_mask_local):
            if not (0 <= p <= 1):
                raise ValidationError("mask probabilities must be in [0, 1]")


@dataclass(eq=False)
class TubeMask:
    """Boolean token mask (True = masked) with its generation trace."""

    grid: np.ndarray
    target: int
    steps: list[TubeStep] = field(default_factory=list)
    filled: int = 0  # cells set by the stall guard, not by tube stamps

    def __post_init__(self):
        self.grid = np.ascontiguousarray(np.asarray(self.grid, dtype=bool))
        if self.grid.ndim != 2:
            raise ValidationError("mask grid must be 2D (temporal x joints)")

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def ratio(self) -> float:
        return self.count / self.grid.size


def _draw_target(n_tokens: int, cfg: MaskConfig, rng: np.random.Generator) -> int:
    lo = cfg.ratio_lo * n_tokens
    hi = cfg.ratio_hi * n_tokens
    target = round(rng.uniform(lo, hi))
    # Rounding must not push the ratio outside [ratio_lo, ratio_hi]; when the
    # band contains no integer at all, plain rounding is the closest we can do.
    lo_int = max(1, math.ceil(lo - 1e-9))
    hi_int = math.floor(hi + 1e-9)
    if lo_int > hi_int:
        return max(1, target)
    return int(np.clip(target, lo_int, hi_int))


def generate_tube_mask(
    grid: TokenGrid,
    topo: SkeletonTopology,
    cfg: MaskConfig,
    rng: np.random.Generator,
) -> TubeMask:
    """Stamp group-contiguous tubes until the drawn token budget is covered."""
    if grid.joints != topo.num_joints:
        raise ValidationError(
            f"token grid has {grid.joints} joint rows but topology has "
            f"{topo.num_joints} joints (joint patch size must be 1)"
        )
    n = grid.size
    target = _draw_target(n, cfg, rng)
    area_max = max(1, round(cfg.area_max_fraction * n))

    mask = np.zeros((grid.temporal, grid.joints), dtype=bool)
    steps: list[TubeStep] = []
    count = 0
    stalled = 0
    filled = 0
    while count < target:
        if stalled >= cfg.stall_limit:
            # Pathological overlap: top up with the highest unmasked cells in
            # scan order so the count contract still holds.
            deficit = target - count
            free = np.flatnonzero(~mask.ravel())
            mask.ravel()[free[-deficit:]] = True
            filled = deficit
            count = target
            break

        p_max = min(target - count, area_max)
        gi = int(rng.integers(0, len(topo.groups)))
        chain = topo.groups[gi][1]
        width = int(rng.integers(1, len(chain) + 1))
        chain_start = int(rng.integers(0, len(chain) - width + 1))
        joints = chain[chain_start : chain_start + width]

        if p_max <= cfg.area_min:
            area = float(p_max)
        else:
            area = rng.uniform(cfg.area_min, p_max)
        duration = int(np.clip(round(area / width), 1, grid.temporal))
        t_start = int(rng.integers(0, grid.temporal - duration + 1))

        block = mask[t_start : t_start + duration, joints]
        new_cells = int((~block).sum())
        if new_cells == 0:
            stalled += 1
            continue
        stalled = 0
        mask[t_start : t_start + duration, joints] = True
        count += new_cells
        steps.append(TubeStep(gi, chain_start, width, t_start, duration, area))

    return TubeMask(grid=mask, target=target, steps=steps, filled=filled)


def generate_independent_mask(
    grid: TokenGrid, cfg: MaskConfig, rng: np.random.Generator
) -> TubeMask:
    """Ablation baseline: the same token budget, but cells chosen independently."""
    n = grid.size
    target = _draw_target(n, cfg, rng)
    chosen = rng.choice(n, size=target, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return TubeMask(grid=mask.reshape(grid.temporal, grid.joints), target=target)


def generate_mask(
    grid: TokenGrid,
    topo: SkeletonTopology,
    cfg: MaskConfig,
    rng: np.random.Generator,
) -> TubeMask:
    if cfg.strategy == "independent":
        return generate_independent_mask(grid, cfg, rng)
    return generate_tube_mask(grid, topo, cfg, rng)


def mask_to_flat_tensor(mask, n_tokens: int) -> torch.Tensor:
    """Normalize a TubeMask / ndarray / tensor to a flat boolean tensor."""
    if isinstance(mask, TubeMask):
        mask = mask.grid
    if isinstance(mask, np.ndarray):
        mask = torch.from_numpy(np.ascontiguousarray(mask))
    if not isinstance(mask, torch.Tensor):
        raise ValidationError(f"unsupported mask type {type(mask).__name__}")
    mask = mask.bool()
    if mask.ndim >= 2 and mask.shape[-1] * mask.shape[-2] == n_tokens:
        mask = mask.reshape(*mask.shape[:-2], n_tokens)
    if mask.shape[-1] != n_tokens:
        raise ValidationError(
            f"mask covers {mask.shape[-1]} tokens but input has {n_tokens}"
        )
    return mask


def apply_mask(tokens: torch.Tensor, mask, mask_token: torch.Tensor) -> torch.Tensor:
    """Replace masked token rows by the learnable mask vector (others untouched)."""
    if tokens.ndim < 2:
        raise ValidationError("tokens must have shape (..., N, D)")
    n, d = tokens.shape[-2], tokens.shape[-1]
    if mask_token.shape != (d,):
        raise ValidationError(f"mask token must have shape ({d},), got {tuple(mask_token.shape)}")
    flat = mask_to_flat_tensor(mask, n)
    return torch.where(flat.unsqueeze(-1), mask_token.to(tokens.dtype), tokens)


def mask_to_text(mask: TubeMask) -> str:
    """Render rows = temporal tokens, '#' masked / '.' visible."""
    return "\n".join("".join("#" if c else "." for c in row) for row in mask.grid)
