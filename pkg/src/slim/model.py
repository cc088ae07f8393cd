"""ViT encoder over skeletal-temporal patches with 1D temporal rotary attention.

Token layout per forward pass: [class | registers | patches]. Patch tokens are
ordered (temporal patch, joint patch) row-major. Rotary rotation is applied to
queries and keys using the temporal patch index; class and register tokens sit
at position 0 and therefore receive the identity rotation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError, ValidationError
from .masking import apply_mask


@dataclass
class ModelConfig:
    layers: int = 8
    dim: int = 256
    heads: int = 8
    mlp_ratio: int = 4
    patch_frames: int = 8
    patch_joints: int = 1
    frames: int = 64
    joints: int = 25
    registers: int = 4
    prototypes: int = 65536
    head_hidden: int = 2048
    head_bottleneck: int = 256
    proj_bias: bool = True
    use_rope: bool = True
    rope_base: float = 10000.0
    share_heads: bool = False

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValidationError("dim must be divisible by heads")
        if (self.dim // self.heads) % 2 != 0:
            raise ValidationError("head dimension must be even for rotary pairs")
        if self.frames % self.patch_frames != 0:
            raise ValidationError("patch_frames must divide frames")
        if self.joints % self.patch_joints != 0:
            raise ValidationError("patch_joints must divide joints")
        if self.layers < 0 or self.registers < 0:
            raise ValidationError("layers and registers must be >= 0")

    @property
    def patch_dim(self) -> int:
        return self.patch_frames * self.patch_joints * 3

    @property
    def joint_tokens(self) -> int:
        return self.joints // self.patch_joints

    def patch_tokens(self, view_frames: int | None = None) -> int:
        t = self.frames if view_frames is None else view_frames
        if t % self.patch_frames != 0:
            raise ValidationError(f"{t} frames not divisible by patch size {self.patch_frames}")
        return (t // self.patch_frames) * self.joint_tokens

    def total_tokens(self, view_frames: int | None = None) -> int:
        return self.patch_tokens(view_frames) + 1 + self.registers

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Desk-scale test profile."""
        return cls(
            layers=2,
            dim=32,
            heads=4,
            prototypes=64,
            head_hidden=64,
            head_bottleneck=32,
        )


def rope_frequencies(head_dim: int, base: float, dtype, device) -> torch.Tensor:
    if head_dim % 2 != 0:
        raise ValidationError("rotary embedding needs an even head dimension")
    idx = torch.arange(head_dim // 2, dtype=dtype, device=device)
    return base ** (-2.0 * idx / head_dim)


def rope_apply(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate consecutive feature pairs of x (..., N, d) by position * freq."""
    d = x.shape[-1]
    freqs = rope_frequencies(d, base, x.dtype, x.device)
    angles = positions.to(x.dtype)[:, None] * freqs[None, :]
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    x_even = x[..., 0::2]
    x_odd = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x_even * cos - x_odd * sin
    out[..., 1::2] = x_even * sin + x_odd * cos
    return out


class PatchEmbed(nn.Module):
    """Flatten temporal-major patches, project, and add joint identity embeddings."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.patch_dim, cfg.dim, bias=cfg.proj_bias)
        self.joint_embed = nn.Parameter(torch.zeros(cfg.joint_tokens, cfg.dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValidationError(f"expected input of shape (B, T, J, 3), got {tuple(x.shape)}")
        b, t, j, c = x.shape
        cfg = self.cfg
        if t % cfg.patch_frames != 0:
            raise ValidationError(f"{t} frames not divisible by patch size {cfg.patch_frames}")
        if j != cfg.joints:
            raise ValidationError(f"expected {cfg.joints} joints, got {j}")
        tt = t // cfg.patch_frames
        jt = cfg.joint_tokens
        x = x.view(b, tt, cfg.patch_frames, jt, cfg.patch_joints, c)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, tt * jt, cfg.patch_dim)
        tokens = self.proj(x)
        return tokens + self.joint_embed.repeat(tt, 1)


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.dim // cfg.heads
        self.scale = self.head_dim**-0.5
        self.use_rope = cfg.use_rope
        self.rope_base = cfg.rope_base
        self.qkv = nn.Linear(cfg.dim, cfg.dim * 3)
        self.proj = nn.Linear(cfg.dim, cfg.dim)

    def forward(self, x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # (B, H, N, dh)
        if self.use_rope:
            q = rope_apply(q, positions, self.rope_base)
            k = rope_apply(k, positions, self.rope_base)
        attn = torch.matmul(q, k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = torch.matmul(attn, v)
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block with residual attention and MLP branches."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.dim)
        self.attn = Attention(cfg)
        self.norm2 = nn.LayerNorm(cfg.dim)
        self.mlp = Mlp(cfg.dim, cfg.mlp_ratio)

    def forward(self, x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), positions)
        x = x + self.mlp(self.norm2(x))
        return x


class Encoded(NamedTuple):
    cls: torch.Tensor        # (B, D)
    patches: torch.Tensor    # (B, N, D)
    registers: torch.Tensor  # (B, R, D); never fed to any loss


class SkeletonEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.cls_token = nn.Parameter(torch.zeros(cfg.dim))
        self.register_tokens = nn.Parameter(torch.zeros(cfg.registers, cfg.dim))
        self.mask_token = nn.Parameter(torch.zeros(cfg.dim))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.dim)
        self.apply(init_weights)
        with torch.no_grad():
            nn.init.trunc_normal_(self.cls_token, std=0.02)
            nn.init.trunc_normal_(self.register_tokens, std=0.02)
            nn.init.trunc_normal_(self.mask_token, std=0.02)
            nn.init.trunc_normal_(self.patch_embed.joint_embed, std=0.02)

    def _positions(self, n_patches: int, device, dtype) -> torch.Tensor:
        jt = self.cfg.joint_tokens
        tt = n_patches // jt
        prefix = torch.zeros(1 + self.cfg.registers, device=device, dtype=dtype)
        patch_pos = torch.arange(tt, device=device, dtype=dtype).repeat_interleave(jt)
        return torch.cat([prefix, patch_pos])

    def encode_tokens(self, tokens: torch.Tensor, mask=None) -> Encoded:
        """Run embedded patch tokens (B, N, D) through the block stack."""
        if tokens.ndim != 3:
            raise ValidationError("tokens must have shape (B, N, D)")
        if mask is not None:
            tokens = apply_mask(tokens, mask, self.mask_token)
        b = tokens.shape[0]
        r = self.cfg.registers
        prefix = torch.cat([self.cls_token[None, :], self.register_tokens], dim=0)
        z = torch.cat([prefix.unsqueeze(0).expand(b, -1, -1), tokens], dim=1)
        positions = self._positions(tokens.shape[1], z.device, z.dtype)
        for i, block in enumerate(self.blocks):
            z = block(z, positions)
            if not torch.isfinite(z).all():
                raise NumericError(f"non-finite activations after layer {i}")
        z = self.norm(z)
        return Encoded(cls=z[:, 0], patches=z[:, 1 + r :], registers=z[:, 1 : 1 + r])

    def forward(self, x: torch.Tensor, mask=None) -> Encoded:
        return self.encode_tokens(self.patch_embed(x), mask=mask)


class HeadOutput(NamedTuple):
    logits: torch.Tensor     # cosine logits against unit prototypes, in [-1, 1]
    embedding: torch.Tensor  # bottleneck features before normalization


class ProjectionHead(nn.Module):
    """3-layer MLP to a bottleneck, then cosine logits against unit prototypes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(cfg.dim, cfg.head_hidden),
            nn.GELU(),
            nn.Linear(cfg.head_hidden, cfg.head_hidden),
            nn.GELU(),
            nn.Linear(cfg.head_hidden, cfg.head_bottleneck),
        )
        self.prototypes = nn.Parameter(torch.zeros(cfg.prototypes, cfg.head_bottleneck))
        self.apply(init_weights)
        with torch.no_grad():
            nn.init.trunc_normal_(self.prototypes, std=0.02)
        self.renormalize_prototypes()

    @torch.no_grad()
    def renormalize_prototypes(self):
        norms = self.prototypes.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        self.prototypes.div_(norms)

    def forward(self, x: torch.Tensor) -> HeadOutput:
        embedding = self.mlp(x)
        normed = F.normalize(embedding, dim=-1, eps=1e-8)
        logits = normed @ self.prototypes.t()
        return HeadOutput(logits=logits, embedding=embedding)


class NetOutput(NamedTuple):
    cls_logits: torch.Tensor           # (B, K)
    patch_logits: torch.Tensor | None  # (B, N, K); None when skipped
    cls_embed: torch.Tensor            # (B, bottleneck)


class SlimNet(nn.Module):
    """Encoder plus the class-token and patch-token projection heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = SkeletonEncoder(cfg)
        self.head_cls = ProjectionHead(cfg)
        self.head_patch = self.head_cls if cfg.share_heads else ProjectionHead(cfg)

    def renormalize_prototypes(self):
        self.head_cls.renormalize_prototypes()
        if self.head_patch is not self.head_cls:
            self.head_patch.renormalize_prototypes()

    def forward(self, x: torch.Tensor, mask=None, patch_head: bool = True) -> NetOutput:
        enc = self.encoder(x, mask=mask)
        cls_out = self.head_cls(enc.cls)
        patch_logits = self.head_patch(enc.patches).logits if patch_head else None
        return NetOutput(
            cls_logits=cls_out.logits,
            patch_logits=patch_logits,
            cls_embed=cls_out.embedding,
        )


def init_weights(module: nn.Module):
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig, seed: int = 0) -> SlimNet:
    """Deterministically initialized student network."""
    torch.manual_seed(seed)
    return SlimNet(cfg)


def make_teacher(student: SlimNet) -> SlimNet:
    teacher = copy.deepcopy(student)
    teacher.requires_grad_(False)
    return teacher


def sequence_to_tensor(coords: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(T, J, 3) numpy coords -> (1, T, J, 3) torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(coords)).to(dtype).unsqueeze(0)
