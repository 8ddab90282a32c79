"""Attention ownership maps: which latent wins each pixel.

Runs a reconstruction with attention capture at one generator operation
(default: the final block's post-upsample feature attention, which is at
full image resolution), takes the argmax over latents per pixel, and colors
each pixel by its winning latent. Ties break toward the lowest latent
index. Masked-out latents hold exactly zero weight, so a pixel can only be
won by a latent of its own label.
"""

from __future__ import annotations

from dataclasses import dataclass
import colorsys

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError
from .transfer import reconstruct

_OPERATIONS = ("op1", "op2", "rgb")


def latent_palette(num_latents: int) -> np.ndarray:
    """(num_latents, 3) uint8 palette of well-separated colors.

    Hues advance by the golden-ratio conjugate with alternating value, so
    neighboring latent indices (same label) stay distinguishable.
    """
    if num_latents < 1:
        raise ValueError("num_latents must be >= 1")
    colors = []
    hue = 0.0
    for i in range(num_latents):
        value = 0.95 if i % 2 == 0 else 0.65
        r, g, b = colorsys.hsv_to_rgb(hue % 1.0, 0.8, value)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
        hue += 0.6180339887498949
    return np.asarray(colors, dtype=np.uint8)


@dataclass
class AttentionVizSpec:
    block_index: int = -1  # negative indexes from the last block
    operation: str = "op2"
    out_path: str | None = None
    palette: np.ndarray | None = None


def visualize_attention(state, image: torch.Tensor, labels: torch.Tensor,
                        spec: AttentionVizSpec | None = None) -> np.ndarray:
    """-> (H, W, 3) uint8 ownership map for one image; writes a PNG when
    spec.out_path is set."""
    spec = spec or AttentionVizSpec()
    cfg = state.generator.cfg
    block = spec.block_index if spec.block_index >= 0 \
        else cfg.num_blocks + spec.block_index
    if not 0 <= block < cfg.num_blocks:
        raise ConfigError(f"block index {spec.block_index} outside "
                          f"[0, {cfg.num_blocks})")
    if spec.operation not in _OPERATIONS:
        raise ConfigError(f"operation must be one of {_OPERATIONS}, got {spec.operation!r}")

    capture: dict = {}
    reconstruct(state, image, labels, capture=capture)
    key = ("generator", block, spec.operation, "feature_sca")
    if key not in capture:
        raise ConfigError(f"no attention captured at {key}")
    record = capture[key]
    weights = record.weights
    if weights.dim() == 3:
        weights = weights[0]
    weights = weights.cpu().numpy()  # (num_pixels, num_latents)

    palette = spec.palette if spec.palette is not None \
        else latent_palette(weights.shape[1])
    if palette.shape[0] < weights.shape[1]:
        raise ConfigError(f"palette has {palette.shape[0]} entries for "
                          f"{weights.shape[1]} latents")

    winners = np.argmax(weights, axis=1)  # first max wins: lowest index on ties
    side = int(round(weights.shape[0] ** 0.5))
    if side * side != weights.shape[0]:
        raise ConfigError(f"captured weights are not a square grid: {weights.shape[0]} pixels")
    ownership = palette[winners].reshape(side, side, 3)

    target = labels.shape[-1]
    if side != target:  # nearest upscale for coarse selectors
        scale = target // side
        if scale * side != target:
            raise ConfigError(f"cannot upscale {side} to {target} evenly")
        ownership = np.repeat(np.repeat(ownership, scale, axis=0), scale, axis=1)

    if spec.out_path:
        Image.fromarray(ownership, mode="RGB").save(spec.out_path)
    return ownership


def save_image(tensor: torch.Tensor, path: str):
    """Write a (3, H, W) image in [-1, 1] as an 8-bit PNG."""
    arr = tensor.detach().cpu().clamp(-1, 1).numpy()
    arr = np.round((arr.transpose(1, 2, 0) + 1.0) * 127.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
