"""Decoder-free masked skeleton representation learning, desk-scale edition."""

from .augment import AugConfig, RotationAngles, apply_saa, mirror, rotate, sample_rotation, scale_bones
from .config import RunConfig, TrainConfig, load_run_config, save_run_config
from .data import (
    BoneSequence,
    LabeledDataset,
    SkeletonSequence,
    SkeletonTopology,
    SyntheticConfig,
    bones_to_joints,
    gen_synthetic,
    joints_to_bones,
    kinect25,
    load_sequence,
    load_topology,
    resample_linear,
    save_sequence,
)
from .losses import DistillConfig, ema_update, glcl_loss, koleo_loss, mfm_loss, sinkhorn_center, softmax_temp
from .masking import MaskConfig, TokenGrid, TubeMask, apply_mask, generate_tube_mask
from .model import ModelConfig, SkeletonEncoder, SlimNet
from .views import Interval, View, ViewConfig, ViewSet, make_view_set

__version__ = "0.1.0"

__all__ = [
    "AugConfig",
    "BoneSequence",
    "DistillConfig",
    "Interval",
    "LabeledDataset",
    "MaskConfig",
    "ModelConfig",
    "RotationAngles",
    "RunConfig",
    "SkeletonEncoder",
    "SkeletonSequence",
    "SkeletonTopology",
    "SlimNet",
    "SyntheticConfig",
    "TokenGrid",
    "TrainConfig",
    "TubeMask",
    "View",
    "ViewConfig",
    "ViewSet",
    "apply_mask",
    "apply_saa",
    "bones_to_joints",
    "ema_update",
    "gen_synthetic",
    "generate_tube_mask",
    "glcl_loss",
    "joints_to_bones",
    "kinect25",
    "koleo_loss",
    "load_run_config",
    "load_sequence",
    "load_topology",
    "make_view_set",
    "mfm_loss",
    "mirror",
    "resample_linear",
    "rotate",
    "sample_rotation",
    "save_run_config",
    "save_sequence",
    "scale_bones",
    "sinkhorn_center",
    "softmax_temp",
]
