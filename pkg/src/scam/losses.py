"""Training losses: hinge GAN pair, feature-matching perceptual term, L1."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class LossWeights:
    lambda_perceptual: float = 10.0
    lambda_l1: float = 10.0


def hinge_discriminator_loss(real_scores: torch.Tensor,
                             fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(relu(1 - real)) + mean(relu(1 + fake))."""
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """-mean(fake): the generator ascends the discriminator's score."""
    return -fake_scores.mean()


def l1_loss(target: torch.Tensor, output: torch.Tensor) -> torch.Tensor:
    return (target - output).abs().mean()


def perceptual_loss(target: torch.Tensor, output: torch.Tensor,
                    extractor) -> torch.Tensor:
    """Sum over extractor taps of the mean absolute feature difference.

    extractor(images) must return a list of feature tensors; pretrained
    backbones and the fixed random stack below share this interface.
    """
    taps_t = extractor(target)
    taps_o = extractor(output)
    if len(taps_t) != len(taps_o):
        raise ValueError("extractor returned differing tap counts")
    total = None
    for ft, fo in zip(taps_t, taps_o):
        term = (ft - fo).abs().mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("extractor returned no taps")
    return total


def total_generator_loss(gan_term: torch.Tensor, perceptual_term: torch.Tensor,
                         l1_term: torch.Tensor,
                         weights: LossWeights | None = None) -> torch.Tensor:
    w = weights or LossWeights()
    return gan_term + w.lambda_perceptual * perceptual_term + w.lambda_l1 * l1_term


class IdentityFeatureExtractor(nn.Module):
    """Single tap: the image itself. perceptual_loss degenerates to L1."""

    def forward(self, images: torch.Tensor):
        return [images]


class RandomFeatureExtractor(nn.Module):
    """Frozen random conv stack with one tap per stage.

    A deterministic, dependency-free stand-in for a pretrained perceptual
    backbone: random projections preserve enough geometry for multi-scale
    feature matching at desk scale. Weights are seeded and never trained.
    """

    def __init__(self, num_taps: int = 3, base_channels: int = 16, seed: int = 0):
        super().__init__()
        if num_taps < 1:
            raise ValueError("num_taps must be >= 1")
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = 3
        for i in range(num_taps):
            out_ch = base_channels * 2 ** i
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (in_ch * 9) ** -0.5)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor):
        taps = []
        x = images
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            taps.append(x)
        return taps
