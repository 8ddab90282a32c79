"""Patch discriminator over image + one-hot mask, with gradient normalization.

The discriminator scores (image, mask) jointly: the one-hot mask is
concatenated to the RGB channels so realism is judged per semantic layout.
Output is a raw patch score grid (no sigmoid), sized by the conv stride
arithmetic. Gradient normalization rescales scores by
1 / (||grad_x D(x)|| + |D(x)| + eps), bounding the effective Lipschitz
constant without weight clipping; it is differentiable, so both players
train through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError
from .masks import one_hot_labels

GRADNORM_EPS = 1.0e-8


@dataclass
class DiscriminatorConfig:
    num_labels: int
    num_layers: int = 4
    base_channels: int = 64
    max_channels: int = 512
    use_gradnorm: bool = True
    spectral_norm: bool = False

    def __post_init__(self):
        if self.num_labels < 1:
            raise ConfigError("num_labels must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")


class PatchDiscriminator(nn.Module):
    """Strided conv stack: (B, 3 + num_labels, H, W) -> (B, 1, H', W').

    num_layers stride-2 convs (kernel 4, padding 1, LeakyReLU 0.2, channel
    widths doubling from base_channels up to max_channels) followed by a
    stride-1 conv to a single score channel. Each stride-2 conv halves the
    spatial side (floor division); the head keeps it.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        in_ch = 3 + cfg.num_labels
        for i in range(cfg.num_layers):
            out_ch = min(cfg.base_channels * 2 ** i, cfg.max_channels)
            conv = nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)
            if cfg.spectral_norm:
                conv = nn.utils.parametrizations.spectral_norm(conv)
            layers += [conv, nn.LeakyReLU(0.2)]
            in_ch = out_ch
        head = nn.Conv2d(in_ch, 1, 4, stride=1, padding=1)
        if cfg.spectral_norm:
            head = nn.utils.parametrizations.spectral_norm(head)
        layers.append(head)
        self.net = nn.Sequential(*layers)

    def score_grid_size(self, side: int) -> int:
        for _ in range(self.cfg.num_layers):
            side = (side + 2 * 1 - 4) // 2 + 1
        return side + 2 * 1 - 4 + 1

    def forward(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"images must be (B, 3, H, W), got {tuple(images.shape)}")
        if labels.shape != (images.shape[0], images.shape[2], images.shape[3]):
            raise ValueError("labels shape does not match images")
        onehot = one_hot_labels(labels, self.cfg.num_labels, dtype=images.dtype)
        return self.net(torch.cat([images, onehot], dim=1))

    def normalized_scores(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Score with gradient normalization applied.

        Differentiates the summed scores w.r.t. the image input with
        create_graph=True, so losses on the result backpropagate into both
        the discriminator and (for generated inputs) the generator.
        """
        if images.requires_grad:
            x = images
        else:
            x = images.detach().requires_grad_(True)
        scores = self.forward(x, labels)
        grad = torch.autograd.grad(scores.sum(), x, create_graph=True)[0]
        grad_norm = grad.flatten(1).norm(2, dim=1)
        return gradnorm_scale(scores, grad_norm)

    def discriminate(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        if self.cfg.use_gradnorm:
            return self.normalized_scores(images, labels)
        return self.forward(images, labels)


def gradnorm_scale(scores: torch.Tensor, input_gradient_norm: torch.Tensor,
                   eps: float = GRADNORM_EPS) -> torch.Tensor:
    """scores / (grad_norm + |scores| + eps), grad_norm one scalar per sample.

    Every rescaled score lies strictly inside (-1, 1); zero scores with zero
    gradient pass through unchanged.
    """
    if input_gradient_norm.dim() != 1 or input_gradient_norm.shape[0] != scores.shape[0]:
        raise ValueError("input_gradient_norm must be (batch,)")
    g = input_gradient_norm.view(-1, *([1] * (scores.dim() - 1)))
    return scores / (g + scores.abs() + eps)
