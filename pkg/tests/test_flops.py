"""Cost model: analytic counts vs the instrumented oracle, and the report."""

import pytest
import torch

from slim.errors import ValidationError
from slim.flops import (
    count_flops,
    default_scenarios,
    flops_report,
    format_report,
    measure_encoder_flops,
    record_macs,
)
from slim.model import ModelConfig, SkeletonEncoder


def test_embedding_only_hand_value():
    cfg = ModelConfig(layers=0, dim=256, heads=8, registers=0)
    out = count_flops(cfg, 201)
    assert cfg.patch_dim == 24
    assert out.patch_embed == 2 * 200 * 24 * 256 == 2_457_600
    assert out.total == out.patch_embed


def test_count_flops_rejects_bad_tokens():
    with pytest.raises(ValidationError):
        count_flops(ModelConfig(), 0)


def test_oracle_equality_random_configs():
    cases = [
        ModelConfig(layers=1, dim=8, heads=2, frames=16, patch_frames=8, joints=3,
                    prototypes=4, head_hidden=8, head_bottleneck=4, registers=0),
        ModelConfig(layers=2, dim=16, heads=4, frames=24, patch_frames=4, joints=5,
                    prototypes=8, head_hidden=16, head_bottleneck=8, registers=2),
        ModelConfig(layers=3, dim=24, heads=2, frames=32, patch_frames=8, joints=7,
                    prototypes=8, head_hidden=16, head_bottleneck=8, registers=4,
                    mlp_ratio=2),
        ModelConfig(layers=1, dim=32, heads=8, frames=8, patch_frames=8, joints=25,
                    prototypes=8, head_hidden=16, head_bottleneck=8, registers=1),
        ModelConfig(layers=4, dim=12, heads=2, frames=40, patch_frames=8, joints=2,
                    prototypes=8, head_hidden=16, head_bottleneck=8, registers=3,
                    mlp_ratio=3),
    ]
    for cfg in cases:
        enc = SkeletonEncoder(cfg)
        analytic = count_flops(cfg, cfg.total_tokens(cfg.frames)).total
        oracle = measure_encoder_flops(enc, cfg.frames)
        assert analytic == oracle, cfg


def test_oracle_equality_across_view_resolutions():
    cfg = ModelConfig.tiny()
    enc = SkeletonEncoder(cfg)
    for frames in (64, 32, 16, 8):
        analytic = count_flops(cfg, cfg.total_tokens(frames)).total
        assert analytic == measure_encoder_flops(enc, frames)


def test_recorder_counts_plain_ops():
    with record_macs() as rec:
        torch.matmul(torch.randn(3, 4), torch.randn(4, 5))
    assert rec.macs == 3 * 4 * 5
    assert rec.flops == 2 * 3 * 4 * 5


def test_monotonicity_in_tokens_depth_width():
    cfg = ModelConfig(registers=0)
    c1 = count_flops(cfg, 101).total
    c2 = count_flops(cfg, 201).total
    assert c2 > c1
    deeper = count_flops(ModelConfig(layers=16, registers=0), 201).total
    assert deeper > count_flops(cfg, 201).total
    wider = count_flops(ModelConfig(dim=512, registers=0), 201).total
    assert wider > count_flops(cfg, 201).total


def test_superlinear_token_scaling():
    """Quadratic attention makes 751 vs 76 tokens cost more than 751/76."""
    report = flops_report()
    ratio = report["mae_inference_to_pretrain"]
    assert ratio > 751 / 76
    assert ratio > 9.9


def test_report_rows_and_symmetry():
    report = flops_report()
    rows = {r["scenario"]: r for r in report["rows"]}
    assert rows["symmetric"]["tokens"] == 201
    assert rows["mae_inference"]["tokens"] == 751
    assert rows["mae_pretrain"]["tokens"] == 76
    assert rows["symmetric"]["ratio_to_baseline"] == 1.0
    assert report["reported"]["inference_surge"] == 14.38
    assert report["reported"]["inference_reduction"] == 7.89
    assert "note" in report


def test_report_empty_scenarios():
    report = flops_report(scenarios=[])
    assert report["rows"] == []


def test_format_report_is_text():
    text = format_report(flops_report())
    assert "symmetric" in text and "GFLOPs" in text


def test_symmetric_training_equals_inference_cost():
    """The same token count flows in pre-training and inference."""
    sc = {s.name: s for s in default_scenarios()}["symmetric"]
    train_cost = count_flops(sc.cfg, sc.tokens, sc.patch_tokens).total
    infer_cost = count_flops(sc.cfg, sc.tokens, sc.patch_tokens).total
    assert train_cost == infer_cost
