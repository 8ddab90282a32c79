"""Semantic attention encoder: images + masks -> per-label latent codes.

A trainable bank of latent vectors (``latents_per_label`` rows per label,
label-major) repeatedly cross-attends the image through the duplicated
pixel-to-latent mask, so each latent only ever reads pixels of its own
label. Between attention rounds a strided conv pyramid coarsens the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .attention import SemanticCrossAttention, sca_latents_self
from .errors import ConfigError
from .masks import downsample_labels, duplicated_bits, group_bits, positional_encoding_2d


@dataclass
class EncoderConfig:
    num_labels: int
    latents_per_label: int = 8
    latent_dim: int = 256
    num_blocks: int = 6
    conv_channels: tuple = (64, 128, 256, 512, 512, 512)
    conv_stride: int = 2
    use_conv: bool = True
    use_self_attention: bool = True
    attn_dim: int = 0  # 0 -> latent_dim
    num_heads: int = 4
    ffn_mult: int = 2
    residual_mode: str = "input"
    mask_fill: float = -1.0e9

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if self.attn_dim == 0:
            self.attn_dim = self.latent_dim
        if self.num_labels < 1 or self.latents_per_label < 1:
            raise ConfigError("num_labels and latents_per_label must be >= 1")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if len(self.conv_channels) != self.num_blocks:
            raise ConfigError(
                f"conv_channels must list one width per block: "
                f"{len(self.conv_channels)} != {self.num_blocks}"
            )
        for c in self.conv_channels:
            if c % 4 != 0:
                raise ConfigError(f"conv channel widths must be divisible by 4, got {c}")
        if self.residual_mode not in ("input", "intermediate"):
            raise ConfigError(f"residual_mode must be 'input' or 'intermediate', got {self.residual_mode!r}")
        if self.conv_stride < 1:
            raise ConfigError("conv_stride must be >= 1")

    @property
    def num_latents(self) -> int:
        return self.num_labels * self.latents_per_label


class SatOperation(nn.Module):
    """Masked cross attention with transformer-style normalized residuals.

    out = LN2(ffn(LN1(attn(primary, context, mask) + primary)) + r) where the
    second residual r is the original primary input (residual_mode="input",
    the default) or the intermediate LN1 output (residual_mode="intermediate",
    the standard transformer wiring). The feed-forward net is two linear
    layers with a GELU and hidden width ffn_mult * primary_dim.
    """

    def __init__(self, primary_dim: int, context_dim: int, attn_dim: int,
                 num_heads: int = 4, ffn_mult: int = 2,
                 residual_mode: str = "input", mask_fill: float = -1.0e9):
        super().__init__()
        if residual_mode not in ("input", "intermediate"):
            raise ValueError(f"unknown residual_mode {residual_mode!r}")
        self.residual_mode = residual_mode
        self.attention = SemanticCrossAttention(
            primary_dim, context_dim, attn_dim, value_dim=primary_dim,
            num_heads=num_heads, mask_fill=mask_fill)
        self.norm_attn = nn.LayerNorm(primary_dim)
        self.norm_ffn = nn.LayerNorm(primary_dim)
        self.ffn = nn.Sequential(
            nn.Linear(primary_dim, ffn_mult * primary_dim),
            nn.GELU(),
            nn.Linear(ffn_mult * primary_dim, primary_dim),
        )

    def forward(self, primary: torch.Tensor, context: torch.Tensor,
                mask: torch.Tensor, capture: bool = False):
        if capture:
            attended, record = self.attention(primary, context, mask, capture=True)
        else:
            attended = self.attention(primary, context, mask)
            record = None
        mid = self.norm_attn(attended + primary)
        residual = primary if self.residual_mode == "input" else mid
        out = self.norm_ffn(self.ffn(mid) + residual)
        if capture:
            return out, record
        return out


class SatBlock(nn.Module):
    """One encoder stage: latents read the feature map, optionally mix
    within their label group, then the feature map is coarsened.

    next_channels=None disables the strided conv (features pass through
    unchanged), which is also how the no-conv ablation runs every block.
    """

    def __init__(self, cfg: EncoderConfig, channels: int, next_channels: int | None):
        super().__init__()
        self.channels = channels
        self.cross = SatOperation(
            cfg.latent_dim, channels, cfg.attn_dim, num_heads=cfg.num_heads,
            ffn_mult=cfg.ffn_mult, residual_mode=cfg.residual_mode,
            mask_fill=cfg.mask_fill)
        if cfg.use_self_attention:
            self.self_op = SatOperation(
                cfg.latent_dim, cfg.latent_dim, cfg.attn_dim, num_heads=cfg.num_heads,
                ffn_mult=cfg.ffn_mult, residual_mode=cfg.residual_mode,
                mask_fill=cfg.mask_fill)
        else:
            self.self_op = None
        if next_channels is not None:
            self.conv = nn.Conv2d(channels, next_channels, 3, stride=cfg.conv_stride, padding=1)
            self.act = nn.LeakyReLU(0.2)
        else:
            self.conv = None
            self.act = None
        self._stride = cfg.conv_stride
        self._cfg = cfg
        group = group_bits(cfg.num_labels, cfg.latents_per_label)
        self.register_buffer("group_mask", group, persistent=False)

    def forward(self, features: torch.Tensor, latents: torch.Tensor,
                labels: torch.Tensor, capture: dict | None = None,
                tag: tuple = ()):  # tag prefixes capture keys
        b, c, h, w = features.shape
        level_labels = downsample_labels(labels, h, w)
        bits = duplicated_bits(level_labels, self._cfg.num_labels,
                               self._cfg.latents_per_label, dtype=features.dtype)
        tokens = features.flatten(2).transpose(1, 2)  # (B, n, C) row-major
        pe = positional_encoding_2d(h, w, c, dtype=features.dtype, device=features.device)
        tokens = tokens + pe.reshape(1, h * w, c)

        pixel_to_latent = bits.transpose(-2, -1)  # latents query pixels
        if capture is not None:
            latents, rec = self.cross(latents, tokens, pixel_to_latent, capture=True)
            capture[tag + ("cross",)] = rec
        else:
            latents = self.cross(latents, tokens, pixel_to_latent)

        if self.self_op is not None:
            gmask = self.group_mask.to(latents.dtype)
            if capture is not None:
                latents, rec = self.self_op(latents, latents, gmask, capture=True)
                capture[tag + ("self",)] = rec
            else:
                latents = self.self_op(latents, latents, gmask)

        if self.conv is not None:
            if h < self._stride or w < self._stride:
                raise ValueError(
                    f"feature map ({h}, {w}) smaller than conv stride {self._stride}")
            features = self.act(self.conv(features))
        return features, latents


class SatEncoder(nn.Module):
    """Full encoder: 1x1 input projection, then num_blocks SatBlocks.

    The latent bank starts from trainable queries shared across images and
    ends as (batch, num_latents, latent_dim) codes. Only the queries depend
    on latents_per_label, so growing it from k to k' adds exactly
    (k' - k) * num_labels * latent_dim parameters.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.queries = nn.Parameter(torch.randn(cfg.num_latents, cfg.latent_dim) * 0.02)
        self.input_proj = nn.Conv2d(3, cfg.conv_channels[0], 1)
        blocks = []
        for i in range(cfg.num_blocks):
            has_conv = cfg.use_conv and i < cfg.num_blocks - 1
            nxt = cfg.conv_channels[i + 1] if has_conv else None
            blocks.append(SatBlock(cfg, cfg.conv_channels[i], nxt))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, images: torch.Tensor, labels: torch.Tensor,
                capture: dict | None = None) -> torch.Tensor:
        """images (B, 3, H, W), labels (B, H, W) -> latents (B, m, d)."""
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"images must be (B, 3, H, W), got {tuple(images.shape)}")
        if labels.shape != (images.shape[0], images.shape[2], images.shape[3]):
            raise ValueError(
                f"labels shape {tuple(labels.shape)} does not match images "
                f"{tuple(images.shape)}")
        features = self.input_proj(images)
        latents = self.queries.unsqueeze(0).expand(images.shape[0], -1, -1)
        for i, block in enumerate(self.blocks):
            features, latents = block(features, latents, labels,
                                      capture=capture, tag=("encoder", i))
        return latents
