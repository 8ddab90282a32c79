"""Semantic masks and the derived attention-mask machinery.

A semantic mask assigns every pixel one of ``num_labels`` integer labels.
Each label owns a fixed number of latent vectors (``latents_per_label``),
so a mask induces two binary attention masks:

* a duplicated mask of shape (num_pixels, num_latents) that connects each
  pixel to every latent of its own label, and
* a block-diagonal group mask of shape (num_latents, num_latents) that
  connects latents sharing a label.

Latent columns are laid out label-major: columns [label * latents_per_label,
(label + 1) * latents_per_label) belong to ``label``. Pixels are flattened
row-major, matching ``tensor.flatten(-2)`` on an (H, W) grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class SemanticMask:
    """Integer label map for one image.

    labels: (H, W) integer tensor with values in [0, num_labels).
    num_labels: declared label count; may exceed the labels present.
    """

    labels: torch.Tensor
    num_labels: int

    def __post_init__(self):
        if self.labels.dim() != 2:
            raise ValueError(f"labels must be 2-D (H, W), got shape {tuple(self.labels.shape)}")
        if self.labels.dtype not in (torch.int64, torch.int32, torch.int16, torch.uint8):
            raise ValueError(f"labels must be an integer tensor, got {self.labels.dtype}")
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if self.labels.numel() > 0:
            lo = int(self.labels.min())
            hi = int(self.labels.max())
            if lo < 0 or hi >= self.num_labels:
                raise ValueError(
                    f"labels out of range: saw [{lo}, {hi}] with num_labels={self.num_labels}"
                )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def one_hot(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Channel-first one-hot encoding, shape (num_labels, H, W)."""
        return one_hot_labels(self.labels, self.num_labels, dtype=dtype)


@dataclass(frozen=True)
class DuplicatedMask:
    """Binary pixel-to-latent mask.

    bits: (num_pixels, num_latents) 0/1 tensor. Row p has exactly
    ``latents_per_label`` ones, in the column block of pixel p's label.
    """

    bits: torch.Tensor
    num_labels: int
    latents_per_label: int

    @property
    def num_pixels(self) -> int:
        return self.bits.shape[0]

    @property
    def num_latents(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class LatentGroupMask:
    """Block-diagonal latent-to-latent mask: 1 iff both latents share a label."""

    bits: torch.Tensor
    num_labels: int
    latents_per_label: int

    @property
    def num_latents(self) -> int:
        return self.bits.shape[0]


def one_hot_labels(labels: torch.Tensor, num_labels: int,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """One-hot a (..., H, W) label tensor to (..., num_labels, H, W)."""
    oh = F.one_hot(labels.long(), num_labels)  # (..., H, W, s)
    return oh.movedim(-1, -3).to(dtype)


def duplicated_bits(labels: torch.Tensor, num_labels: int, latents_per_label: int,
                    dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Pixel-to-latent connection bits for a (..., H, W) label tensor.

    Returns (..., H*W, num_labels * latents_per_label). Pixels are flattened
    row-major; latent columns are label-major. Row sums are exactly
    ``latents_per_label``.
    """
    if latents_per_label < 1:
        raise ValueError("latents_per_label must be >= 1")
    flat = labels.flatten(-2)  # (..., n)
    oh = F.one_hot(flat.long(), num_labels)  # (..., n, s)
    return oh.repeat_interleave(latents_per_label, dim=-1).to(dtype)


def duplicate_mask(mask: SemanticMask, latents_per_label: int) -> DuplicatedMask:
    """Expand a semantic mask into its pixel-to-latent attention mask."""
    bits = duplicated_bits(mask.labels, mask.num_labels, latents_per_label)
    return DuplicatedMask(bits=bits, num_labels=mask.num_labels,
                          latents_per_label=latents_per_label)


def group_bits(num_labels: int, latents_per_label: int,
               dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Block-diagonal (m, m) bits with one all-ones block per label."""
    if num_labels < 1 or latents_per_label < 1:
        raise ValueError("num_labels and latents_per_label must be >= 1")
    eye = torch.eye(num_labels, dtype=dtype)
    block = torch.ones(latents_per_label, latents_per_label, dtype=dtype)
    return torch.kron(eye, block)


def build_latent_group_mask(num_labels: int, latents_per_label: int) -> LatentGroupMask:
    return LatentGroupMask(bits=group_bits(num_labels, latents_per_label),
                           num_labels=num_labels, latents_per_label=latents_per_label)


def downsample_labels(labels: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Nearest-neighbor downsample of a (..., H, W) integer label tensor.

    Source index rule: src = floor(dst * src_size / dst_size), i.e. the
    top-left pixel of each cell. Never interpolates label values, so the
    result contains only labels present in the input.
    """
    src_h, src_w = labels.shape[-2], labels.shape[-1]
    if height < 1 or width < 1:
        raise ValueError("target dims must be >= 1")
    if height > src_h or width > src_w:
        raise ValueError(
            f"can only downsample: target ({height}, {width}) exceeds source ({src_h}, {src_w})"
        )
    rows = torch.div(torch.arange(height, device=labels.device) * src_h, height,
                     rounding_mode="floor")
    cols = torch.div(torch.arange(width, device=labels.device) * src_w, width,
                     rounding_mode="floor")
    return labels.index_select(-2, rows).index_select(-1, cols)


def downsample_mask(mask: SemanticMask, height: int, width: int) -> SemanticMask:
    return SemanticMask(labels=downsample_labels(mask.labels, height, width),
                        num_labels=mask.num_labels)


def positional_encoding_2d(height: int, width: int, channels: int,
                           dtype: torch.dtype = torch.float32,
                           device=None) -> torch.Tensor:
    """Fixed 2-D sinusoidal positional encodings, shape (H, W, channels).

    The channel budget is split evenly between the row and column axes, and
    each axis half is split into sine and cosine banks over geometrically
    spaced frequencies (base period 10000). Values lie in [-1, 1]; position
    (0, 0) has all-zero sine channels and all-one cosine channels.

    channels must be divisible by 4.
    """
    if channels % 4 != 0:
        raise ValueError(f"channels must be divisible by 4, got {channels}")
    quarter = channels // 4
    freq = torch.exp(
        torch.arange(quarter, dtype=torch.float64, device=device)
        * (-math.log(10000.0) / quarter)
    )
    ys = torch.arange(height, dtype=torch.float64, device=device)[:, None] * freq[None, :]
    xs = torch.arange(width, dtype=torch.float64, device=device)[:, None] * freq[None, :]
    enc = torch.empty(height, width, channels, dtype=torch.float64, device=device)
    enc[..., 0 * quarter:1 * quarter] = torch.sin(ys)[:, None, :]
    enc[..., 1 * quarter:2 * quarter] = torch.cos(ys)[:, None, :]
    enc[..., 2 * quarter:3 * quarter] = torch.sin(xs)[None, :, :]
    enc[..., 3 * quarter:4 * quarter] = torch.cos(xs)[None, :, :]
    return enc.to(dtype)
