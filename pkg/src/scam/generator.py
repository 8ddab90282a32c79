"""Mask-conditioned generator modulated by per-label latent codes.

Starting from a coarse embedding of the one-hot mask, each stage refreshes
the latents against the current feature map, lets every pixel read its own
label's latents through masked cross attention, and uses the result to
modulate instance-normalized features (scale, shift, optional learned noise)
before a 3x3 conv. An RGB accumulator is grown alongside the features and
doubled once per stage, progressive-growing style; the first stage runs at
the base resolution without upsampling so the final side equals
base_resolution * 2 ** (num_blocks - 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .attention import SemanticCrossAttention
from .encoder import SatOperation
from .errors import ConfigError
from .masks import downsample_labels, duplicated_bits, one_hot_labels, positional_encoding_2d


@dataclass
class GeneratorConfig:
    num_labels: int
    latents_per_label: int = 8
    latent_dim: int = 256
    num_blocks: int = 7
    base_resolution: int = 4
    channels: tuple = (512, 512, 512, 512, 256, 128, 64)
    attn_dim: int = 0  # 0 -> latent_dim
    num_heads: int = 4
    ffn_mult: int = 2
    use_latent_sat: bool = True
    noise_enabled: bool = True
    upsample_mode: str = "nearest"
    residual_mode: str = "input"
    mask_fill: float = -1.0e9

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.attn_dim == 0:
            self.attn_dim = self.latent_dim
        if self.num_labels < 1 or self.latents_per_label < 1:
            raise ConfigError("num_labels and latents_per_label must be >= 1")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.base_resolution < 1:
            raise ConfigError("base_resolution must be >= 1")
        if len(self.channels) != self.num_blocks:
            raise ConfigError(
                f"channels must list one width per block: "
                f"{len(self.channels)} != {self.num_blocks}")
        for c in self.channels:
            if c % 4 != 0:
                raise ConfigError(f"channel widths must be divisible by 4, got {c}")
            if c % self.num_heads != 0:
                raise ConfigError(
                    f"channel widths must be divisible by num_heads "
                    f"({self.num_heads}), got {c}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ConfigError(f"upsample_mode must be 'nearest' or 'bilinear', got {self.upsample_mode!r}")
        if self.residual_mode not in ("input", "intermediate"):
            raise ConfigError(f"residual_mode must be 'input' or 'intermediate', got {self.residual_mode!r}")

    @property
    def num_latents(self) -> int:
        return self.num_labels * self.latents_per_label

    @property
    def final_resolution(self) -> int:
        return self.base_resolution * 2 ** (self.num_blocks - 1)


class _BitsCache:
    """Per-forward cache of duplicated mask bits at each feature resolution."""

    def __init__(self, labels: torch.Tensor, num_labels: int, latents_per_label: int):
        self.labels = labels
        self.num_labels = num_labels
        self.latents_per_label = latents_per_label
        self._cache: dict = {}

    def get(self, height: int, width: int, dtype: torch.dtype) -> torch.Tensor:
        key = (height, width, dtype)
        if key not in self._cache:
            lvl = downsample_labels(self.labels, height, width)
            self._cache[key] = duplicated_bits(
                lvl, self.num_labels, self.latents_per_label, dtype=dtype)
        return self._cache[key]


class ScamOperation(nn.Module):
    """One modulation step: refresh latents, attend, modulate, convolve.

    With use_latent_sat, the latents first read the current pixel tokens
    (positional encodings added on the pixel side only). Every pixel then
    queries its label's latents, and the per-pixel result parameterizes an
    affine modulation of the instance-normalized input:

        out = conv3x3(scale(a) * inorm(x) + shift(a) + noise)

    where a is the attention readout, scale/shift are 1x1 convs, inorm is
    non-affine instance normalization, and noise (when enabled and a
    torch.Generator is supplied) is i.i.d. Gaussian per pixel and channel
    scaled by a learned non-negative sigma (one scalar per operation,
    sigma = |weight|, initialized at 0).
    """

    def __init__(self, cfg: GeneratorConfig, in_channels: int, out_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        if cfg.use_latent_sat:
            self.latent_sat = SatOperation(
                cfg.latent_dim, in_channels, cfg.attn_dim, num_heads=cfg.num_heads,
                ffn_mult=cfg.ffn_mult, residual_mode=cfg.residual_mode,
                mask_fill=cfg.mask_fill)
        else:
            self.latent_sat = None
        self.feature_attn = SemanticCrossAttention(
            in_channels, cfg.latent_dim, cfg.attn_dim, value_dim=in_channels,
            num_heads=cfg.num_heads, mask_fill=cfg.mask_fill)
        self.scale = nn.Conv2d(in_channels, in_channels, 1)
        self.shift = nn.Conv2d(in_channels, in_channels, 1)
        self.inorm = nn.InstanceNorm2d(in_channels, affine=False, track_running_stats=False)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.noise_enabled = cfg.noise_enabled
        if cfg.noise_enabled:
            self.noise_weight = nn.Parameter(torch.zeros(()))

    @property
    def noise_sigma(self) -> torch.Tensor:
        if not self.noise_enabled:
            return torch.zeros(())
        return self.noise_weight.abs()

    def forward(self, features: torch.Tensor, latents: torch.Tensor,
                bits: torch.Tensor, noise_generator: torch.Generator | None = None,
                capture: dict | None = None, tag: tuple = ()):
        b, c, h, w = features.shape
        tokens = features.flatten(2).transpose(1, 2)
        pe = positional_encoding_2d(h, w, c, dtype=features.dtype, device=features.device)
        tokens = tokens + pe.reshape(1, h * w, c)

        if self.latent_sat is not None:
            latent_mask = bits.transpose(-2, -1)
            if capture is not None:
                latents, rec = self.latent_sat(latents, tokens, latent_mask, capture=True)
                capture[tag + ("latent_sat",)] = rec
            else:
                latents = self.latent_sat(latents, tokens, latent_mask)

        if capture is not None:
            readout, rec = self.feature_attn(tokens, latents, bits, capture=True)
            capture[tag + ("feature_sca",)] = rec
        else:
            readout = self.feature_attn(tokens, latents, bits)
        readout = readout.transpose(1, 2).reshape(b, c, h, w)

        modulated = self.scale(readout) * self.inorm(features) + self.shift(readout)
        if self.noise_enabled and noise_generator is not None:
            eps = torch.randn(modulated.shape, generator=noise_generator,
                              dtype=modulated.dtype, device=modulated.device)
            modulated = modulated + self.noise_weight * eps
        return self.conv(modulated), latents


class ScamBlock(nn.Module):
    """One generator stage: modulate, upsample, modulate, emit RGB.

    The RGB branch is a third operation mapping the stage's output features
    to 3 channels; its latent output is discarded. The accumulator is
    upsampled alongside the features and the new RGB map is added to it.
    """

    def __init__(self, cfg: GeneratorConfig, in_channels: int, out_channels: int,
                 upsample: bool = True):
        super().__init__()
        self.cfg = cfg
        self.upsample = upsample
        self.op_pre = ScamOperation(cfg, in_channels, in_channels)
        self.op_post = ScamOperation(cfg, in_channels, out_channels)
        self.op_rgb = ScamOperation(cfg, out_channels, 3)

    def _up(self, x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode=self.cfg.upsample_mode)

    def forward(self, features: torch.Tensor, rgb_accum: torch.Tensor,
                latents: torch.Tensor, bits_cache: _BitsCache,
                noise_generator: torch.Generator | None = None,
                capture: dict | None = None, tag: tuple = ()):
        bits = bits_cache.get(features.shape[2], features.shape[3], features.dtype)
        features, latents = self.op_pre(features, latents, bits, noise_generator,
                                        capture, tag + ("op1",))
        if self.upsample:
            features = self._up(features)
            bits = bits_cache.get(features.shape[2], features.shape[3], features.dtype)
        features, latents = self.op_post(features, latents, bits, noise_generator,
                                         capture, tag + ("op2",))
        rgb_delta, _ = self.op_rgb(features, latents, bits, noise_generator,
                                   capture, tag + ("rgb",))
        if self.upsample:
            rgb_accum = self._up(rgb_accum)
        return features, rgb_accum + rgb_delta, latents


class ScamGenerator(nn.Module):
    """Latent codes + semantic mask -> image in [-1, 1].

    The mask is the only spatial input: initial features are a 3x3 conv of
    the one-hot mask downsampled to base_resolution. No parameter depends on
    latents_per_label, so the encoder's query bank is the only place model
    size grows with it.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mask_embed = nn.Conv2d(cfg.num_labels, cfg.channels[0], 3, padding=1)
        blocks = []
        for j in range(cfg.num_blocks):
            in_ch = cfg.channels[j]
            out_ch = cfg.channels[j + 1] if j + 1 < cfg.num_blocks else cfg.channels[j]
            blocks.append(ScamBlock(cfg, in_ch, out_ch, upsample=j > 0))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, latents: torch.Tensor, labels: torch.Tensor,
                noise_generator: torch.Generator | None = None,
                capture: dict | None = None) -> torch.Tensor:
        """latents (B, m, d), labels (B, H, W) with H = W = final_resolution."""
        cfg = self.cfg
        if latents.dim() != 3 or latents.shape[1] != cfg.num_latents \
                or latents.shape[2] != cfg.latent_dim:
            raise ValueError(
                f"latents must be (B, {cfg.num_latents}, {cfg.latent_dim}), "
                f"got {tuple(latents.shape)}")
        side = cfg.final_resolution
        if labels.shape != (latents.shape[0], side, side):
            raise ValueError(
                f"labels must be (B, {side}, {side}), got {tuple(labels.shape)}")

        bits_cache = _BitsCache(labels, cfg.num_labels, cfg.latents_per_label)
        base = downsample_labels(labels, cfg.base_resolution, cfg.base_resolution)
        features = self.mask_embed(one_hot_labels(base, cfg.num_labels,
                                                  dtype=latents.dtype))
        rgb = torch.zeros(latents.shape[0], 3, cfg.base_resolution, cfg.base_resolution,
                          dtype=latents.dtype, device=latents.device)
        for j, block in enumerate(self.blocks):
            features, rgb, latents = block(features, rgb, latents, bits_cache,
                                           noise_generator, capture, ("generator", j))
        return torch.tanh(rgb)
