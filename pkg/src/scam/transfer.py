"""Inference-time recombination: reconstruction, pose transfer, subject swap.

The latent bank is label-major (latents_per_label consecutive rows per
label), so transferring a subject between images is row surgery: take the
background labels' rows from one image's codes and every other row from the
other's, then decode against a pose mask. Rows are copied verbatim, never
blended. All functions run noise-free by default and accept single images
(3, H, W) / (H, W) or batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError

SUBJECT = "subject"
BACKGROUND = "background"


@dataclass(frozen=True)
class MixPlan:
    """Maps every label to the source its latent rows come from.

    sources: {label: "subject" | "background"}, covering each label in
    [0, num_labels) exactly once.
    """

    sources: dict
    num_labels: int

    def __post_init__(self):
        expected = set(range(self.num_labels))
        if set(self.sources) != expected:
            raise ConfigError(
                f"mix plan must assign every label in [0, {self.num_labels}) "
                f"exactly once, got {sorted(self.sources)}")
        for label, src in self.sources.items():
            if src not in (SUBJECT, BACKGROUND):
                raise ConfigError(f"label {label}: source must be "
                                  f"'{SUBJECT}' or '{BACKGROUND}', got {src!r}")

    @classmethod
    def default(cls, num_labels: int, background_labels=(0,)) -> "MixPlan":
        bg = set(background_labels)
        return cls({lb: (BACKGROUND if lb in bg else SUBJECT)
                    for lb in range(num_labels)}, num_labels)


def mix_latents(subject_latents: torch.Tensor, background_latents: torch.Tensor,
                plan: MixPlan, latents_per_label: int) -> torch.Tensor:
    """Assemble mixed codes; each row is bit-identical to its source row."""
    if subject_latents.shape != background_latents.shape:
        raise ValueError("latent banks must have equal shapes")
    k = latents_per_label
    if subject_latents.shape[-2] != plan.num_labels * k:
        raise ValueError(
            f"latent bank has {subject_latents.shape[-2]} rows, plan expects "
            f"{plan.num_labels * k}")
    mixed = subject_latents.clone()
    for label, src in plan.sources.items():
        if src == BACKGROUND:
            rows = slice(label * k, (label + 1) * k)
            mixed[..., rows, :] = background_latents[..., rows, :]
    return mixed


def _batched(image: torch.Tensor, labels: torch.Tensor):
    if image.dim() == 3:
        return image.unsqueeze(0), labels.unsqueeze(0), True
    return image, labels, False


def encode_image(state, image: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    image, labels, single = _batched(image, labels)
    with torch.no_grad():
        latents = state.encoder(image, labels)
    return latents.squeeze(0) if single else latents


def decode_latents(state, latents: torch.Tensor, pose_labels: torch.Tensor,
                   capture: dict | None = None) -> torch.Tensor:
    single = latents.dim() == 2
    if single:
        latents = latents.unsqueeze(0)
        pose_labels = pose_labels.unsqueeze(0)
    with torch.no_grad():
        out = state.generator(latents, pose_labels, noise_generator=None,
                              capture=capture)
    return out.squeeze(0) if single else out


def reconstruct(state, image: torch.Tensor, labels: torch.Tensor,
                capture: dict | None = None) -> torch.Tensor:
    """Encode then decode against the image's own mask. Deterministic."""
    image_b, labels_b, single = _batched(image, labels)
    with torch.no_grad():
        latents = state.encoder(image_b, labels_b)
        out = state.generator(latents, labels_b, noise_generator=None,
                              capture=capture)
    return out.squeeze(0) if single else out


def pose_transfer(state, style_image: torch.Tensor, style_labels: torch.Tensor,
                  pose_labels: torch.Tensor) -> torch.Tensor:
    """Decode one image's codes against another layout: appearance from the
    style image, geometry from the pose mask."""
    style_image, style_labels, single = _batched(style_image, style_labels)
    pose_labels_b = pose_labels.unsqueeze(0) if pose_labels.dim() == 2 else pose_labels
    with torch.no_grad():
        latents = state.encoder(style_image, style_labels)
        out = state.generator(latents, pose_labels_b, noise_generator=None)
    return out.squeeze(0) if single else out


def subject_transfer(state, subject_image: torch.Tensor, subject_labels: torch.Tensor,
                     background_image: torch.Tensor, background_labels: torch.Tensor,
                     pose_labels: torch.Tensor | None = None,
                     plan: MixPlan | None = None,
                     capture: dict | None = None) -> torch.Tensor:
    """Drop the subject from one image into another's background.

    Background-assigned labels keep the background image's codes; all other
    labels take the subject image's. The pose mask defaults to the
    background image's mask.
    """
    num_labels = state.model_config.num_labels
    k = state.model_config.latents_per_label
    plan = plan or MixPlan.default(num_labels)
    if plan.num_labels != num_labels:
        raise ConfigError(f"mix plan covers {plan.num_labels} labels, model has {num_labels}")
    subject_image, subject_labels, single = _batched(subject_image, subject_labels)
    background_image, background_labels, _ = _batched(background_image, background_labels)
    if pose_labels is None:
        pose_labels_b = background_labels
    else:
        pose_labels_b = pose_labels.unsqueeze(0) if pose_labels.dim() == 2 else pose_labels
    with torch.no_grad():
        z_subject = state.encoder(subject_image, subject_labels)
        z_background = state.encoder(background_image, background_labels)
        mixed = mix_latents(z_subject, z_background, plan, k)
        out = state.generator(mixed, pose_labels_b, noise_generator=None,
                              capture=capture)
    return out.squeeze(0) if single else out
