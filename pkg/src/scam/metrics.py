"""Evaluation metrics: PSNR, Frechet distances, re-identification scores.

Frechet distances are computed between Gaussian fits to embedded image
sets; the embedder is pluggable (flattened pixels, a fixed-seed random conv
net, or any callable mapping (N, 3, H, W) images to (N, D) vectors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError

PSNR_CAP_DB = 99.0
_FRECHET_JITTER = 1.0e-6


@dataclass
class EmbeddingSet:
    """Vectors (N, D) float64 plus a tag naming where they came from."""

    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise NumericError("embedding set must be 2-D (N, D)")


def psnr(reference: torch.Tensor, output: torch.Tensor,
         max_value: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs cap at 99 dB.

    max_value defaults to 2.0, the full span of [-1, 1] images.
    """
    if reference.shape != output.shape:
        raise NumericError(f"psnr shape mismatch: {tuple(reference.shape)} vs {tuple(output.shape)}")
    mse = float(((reference.double() - output.double()) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    value = 10.0 * np.log10(max_value ** 2 / mse)
    return float(min(value, PSNR_CAP_DB))


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues that dip slightly negative from rounding are clamped to 0.
    """
    sym = (matrix + matrix.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(set_a: EmbeddingSet, set_b: EmbeddingSet) -> float:
    """||mu_a - mu_b||^2 + tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^{1/2}).

    The covariance-product root is computed as
    sqrt(A) @ Sig_b @ sqrt(A) (symmetric PSD, same trace), with a small
    diagonal jitter on both covariances for stability. Symmetric in its
    arguments; identical sets give 0 (up to float rounding).
    """
    a, b = set_a.vectors, set_b.vectors
    if a.shape[1] != b.shape[1]:
        raise NumericError("embedding dims differ")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise NumericError("need at least 2 vectors per set for a covariance")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericError("non-finite embeddings")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    dim = a.shape[1]
    jitter = _FRECHET_JITTER * np.eye(dim)
    cov_a = np.cov(a, rowvar=False) + jitter
    cov_b = np.cov(b, rowvar=False) + jitter
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def embed_images(images: torch.Tensor, embedder, source: str = "",
                 batch_size: int = 64) -> EmbeddingSet:
    """Run the embedder over (N, 3, H, W) images in batches."""
    chunks = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out = embedder(images[start:start + batch_size])
            chunks.append(out.detach().double().cpu().numpy())
    return EmbeddingSet(np.concatenate(chunks, axis=0), source=source)


def reconstruction_fid(reference: EmbeddingSet, reconstructed: EmbeddingSet) -> float:
    """Frechet distance between a reference set and reconstructions (R-FID)."""
    return frechet_distance(reference, reconstructed)


def transfer_fid(reference: EmbeddingSet, transferred: EmbeddingSet) -> float:
    """Frechet distance between a reference set and transfer outputs (S-FID)."""
    return frechet_distance(reference, transferred)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return num / np.maximum(den, 1.0e-12)


def reid_similarity(subject: EmbeddingSet, transfer: EmbeddingSet) -> float:
    """Mean cosine similarity between paired subject and transfer embeddings."""
    a, b = subject.vectors, transfer.vectors
    if a.shape != b.shape:
        raise NumericError("reid_similarity expects paired sets of equal shape")
    return float(_cosine(a, b).mean())


def reid_accuracy(subject: EmbeddingSet, background: EmbeddingSet,
                  transfer: EmbeddingSet) -> float:
    """Fraction of triples where the transfer output is strictly closer
    (cosine) to its subject source than to its background source. Ties
    count as failures."""
    a, b, t = subject.vectors, background.vectors, transfer.vectors
    if not (a.shape == b.shape == t.shape):
        raise NumericError("reid_accuracy expects three paired sets of equal shape")
    return float((_cosine(a, t) > _cosine(b, t)).mean())


def region_mean_baseline(image: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Fill every labeled region with its mean color.

    The analytic reconstruction baseline: any model worth training must beat
    the PSNR of this image against the original.
    """
    if image.dim() != 3 or image.shape[0] != 3:
        raise NumericError("image must be (3, H, W)")
    out = torch.empty_like(image)
    for label in torch.unique(labels):
        region = labels == label
        mean = image[:, region].mean(dim=1)
        out[:, region] = mean[:, None]
    return out


class IdentityEmbedder(nn.Module):
    """Flattened pixels as the embedding."""

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return images.flatten(1)


class RandomConvEmbedder(nn.Module):
    """Frozen random conv stack pooled to a fixed-width embedding.

    Deterministic for a fixed seed; the desk-scale stand-in wherever a
    pretrained embedding network would be used at full scale.
    """

    def __init__(self, embed_dim: int = 64, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [3, 16, 32, embed_dim]
        convs = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (cin * 9) ** -0.5)
                conv.bias.zero_()
            convs.append(conv)
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return x.mean(dim=(2, 3))
