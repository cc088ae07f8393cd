"""Skeleton-aware augmentations: rotation, bilateral mirroring, bone scaling.

Rotation and mirroring are isometries; bone scaling changes bone lengths by a
per-group factor while preserving bone directions and the root trajectory.
All math runs in float64 on the sequence coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import SkeletonSequence, SkeletonTopology, joints_to_bones
from .errors import ValidationError
from .views import View


@dataclass
class AugConfig:
    p_apply: float = 0.5
    tilt_deg: float = 30.0
    vertical_deg: float = 180.0
    scale_lo: float = 0.85
    scale_hi: float = 1.15
    limited: bool = False  # conventional-baseline variants, for ablations

    def __post_init__(self):
        if not (0 <= self.p_apply <= 1):
            raise ValidationError("p_apply must be in [0, 1]")
        if self.tilt_deg < 0 or self.vertical_deg < 0:
            raise ValidationError("angle bounds must be >= 0")
        if not (0 < self.scale_lo <= self.scale_hi):
            raise ValidationError("need 0 < scale_lo <= scale_hi")


@dataclass(frozen=True)
class RotationAngles:
    """Euler angles in radians: alpha about x, beta about y, gamma about z."""

    alpha: float
    beta: float
    gamma: float


def rotation_matrix(angles: RotationAngles) -> np.ndarray:
    ca, sa = math.cos(angles.alpha), math.sin(angles.alpha)
    cb, sb = math.cos(angles.beta), math.sin(angles.beta)
    cg, sg = math.cos(angles.gamma), math.sin(angles.gamma)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]], dtype=np.float64)
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]], dtype=np.float64)
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def sample_rotation(cfg: AugConfig, rng: np.random.Generator) -> RotationAngles:
    """Small tilts about x/z, free spin about the vertical y axis."""
    tilt = math.radians(cfg.tilt_deg)
    vert = math.radians(cfg.vertical_deg)
    alpha = rng.uniform(-tilt, tilt)
    beta = rng.uniform(-vert, vert)
    gamma = rng.uniform(-tilt, tilt)
    return RotationAngles(alpha=alpha, beta=beta, gamma=gamma)


def rotate(seq: SkeletonSequence, angles: RotationAngles) -> SkeletonSequence:
    r = rotation_matrix(angles)
    return SkeletonSequence(seq.coords @ r.T)


def mirror(seq: SkeletonSequence, topo: SkeletonTopology) -> SkeletonSequence:
    """Swap bilateral joint indices, then negate the lateral axis."""
    if seq.joints != topo.num_joints:
        raise ValidationError("sequence joint count does not match topology")
    perm = topo.swap_permutation()
    coords = seq.coords[:, perm, :].copy()
    coords[:, :, topo.lateral_axis] = -coords[:, :, topo.lateral_axis]
    return SkeletonSequence(coords)


def scale_bones(
    seq: SkeletonSequence,
    topo: SkeletonTopology,
    factors: dict[str, float] | np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    scale_lo: float = 0.85,
    scale_hi: float = 1.15,
) -> SkeletonSequence:
    """Scale each bone by its owning group's factor; root trajectory is untouched.

    factors may be a per-group array, a {group name: factor} map, or None to
    sample one factor per group from U(scale_lo, scale_hi).
    """
    n_groups = len(topo.groups)
    if factors is None:
        if rng is None:
            raise ValidationError("need factors or an rng to sample them")
        group_factors = rng.uniform(scale_lo, scale_hi, size=n_groups)
    elif isinstance(factors, dict):
        names = [n for n, _ in topo.groups]
        missing = [n for n in names if n not in factors]
        if missing:
            raise ValidationError(f"missing scale factors for groups: {missing}")
        group_factors = np.array([float(factors[n]) for n in names])
    else:
        group_factors = np.asarray(factors, dtype=np.float64)
        if group_factors.shape != (n_groups,):
            raise ValidationError(f"expected {n_groups} group factors")
    if (group_factors <= 0).any():
        raise ValidationError("scale factors must be positive")

    joint_scale = group_factors[topo.group_of()]
    bones = joints_to_bones(seq, topo)
    scaled = bones.bones * joint_scale[None, :, None]

    coords = np.empty_like(seq.coords)
    coords[:, topo.root, :] = seq.coords[:, topo.root, :]
    for j in topo.topological_order():
        if j == topo.root:
            continue
        coords[:, j, :] = coords[:, topo.parents[j], :] + scaled[:, j, :]
    return SkeletonSequence(coords)


# --- ablation baselines ("limited" variants of each transform) -------------


def rotate_limited(seq: SkeletonSequence, cfg: AugConfig, rng: np.random.Generator) -> SkeletonSequence:
    """Uniform small-range rotation on all three axes (no free vertical spin)."""
    tilt = math.radians(cfg.tilt_deg)
    angles = RotationAngles(*rng.uniform(-tilt, tilt, size=3))
    return rotate(seq, angles)


def mirror_index_only(seq: SkeletonSequence, topo: SkeletonTopology) -> SkeletonSequence:
    """Heuristic index swap without the lateral reflection (not a true mirror)."""
    perm = topo.swap_permutation()
    return SkeletonSequence(seq.coords[:, perm, :])


def scale_naive(seq: SkeletonSequence, cfg: AugConfig, rng: np.random.Generator) -> SkeletonSequence:
    """Per-coordinate scaling of raw positions; distorts bone proportions."""
    factors = rng.uniform(cfg.scale_lo, cfg.scale_hi, size=3)
    return SkeletonSequence(seq.coords * factors)


def augment_sequence(
    seq: SkeletonSequence,
    topo: SkeletonTopology,
    cfg: AugConfig,
    rng: np.random.Generator,
) -> SkeletonSequence:
    """Apply rotate -> mirror -> scale, each independently with p_apply.

    All gate and parameter draws happen unconditionally so the rng stream
    consumed is independent of which transforms fire. limited=True swaps in
    the conventional baselines of each transform for ablations.
    """
    gates = rng.random(3) < cfg.p_apply
    angles = sample_rotation(cfg, rng)
    factors = rng.uniform(cfg.scale_lo, cfg.scale_hi, size=len(topo.groups))
    if cfg.limited:
        if gates[0]:
            seq = rotate_limited(seq, cfg, rng)
        if gates[1]:
            seq = mirror_index_only(seq, topo)
        if gates[2]:
            seq = scale_naive(seq, cfg, rng)
        return seq
    if gates[0]:
        seq = rotate(seq, angles)
    if gates[1]:
        seq = mirror(seq, topo)
    if gates[2]:
        seq = scale_bones(seq, topo, factors)
    return seq


def apply_saa(
    view: View, topo: SkeletonTopology, cfg: AugConfig, rng: np.random.Generator
) -> View:
    return replace(view, sequence=augment_sequence(view.sequence, topo, cfg, rng))
