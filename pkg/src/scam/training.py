"""Adversarial training loop: one discriminator step, then one
encoder+generator step, per batch.

All randomness after model init flows through one torch.Generator owned by
the TrainState (batch sampling and generator noise), so a fixed seed fixes
the whole trajectory and checkpoint resume can continue it bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import ModelConfig, TrainConfig
from .discriminator import PatchDiscriminator
from .encoder import SatEncoder
from .errors import TrainingDiverged
from .generator import ScamGenerator
from .losses import (LossWeights, RandomFeatureExtractor, hinge_discriminator_loss,
                     hinge_generator_loss, l1_loss, perceptual_loss,
                     total_generator_loss)


@dataclass
class TrainState:
    model_config: ModelConfig
    train_config: TrainConfig
    encoder: SatEncoder
    generator: ScamGenerator
    discriminator: PatchDiscriminator
    perceptual: RandomFeatureExtractor
    opt_eg: torch.optim.AdamW
    opt_d: torch.optim.AdamW
    rng: torch.Generator
    step: int = 0

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_perceptual=self.train_config.lambda_perceptual,
                           lambda_l1=self.train_config.lambda_l1)


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    """Build models, optimizers, and the run RNG from the config seed."""
    model_cfg.validate()
    device = torch.device(train_cfg.device)
    torch.manual_seed(train_cfg.seed)
    encoder = SatEncoder(model_cfg.encoder_config()).to(device)
    generator = ScamGenerator(model_cfg.generator_config()).to(device)
    discriminator = PatchDiscriminator(model_cfg.discriminator_config()).to(device)
    perceptual = RandomFeatureExtractor(
        num_taps=train_cfg.perceptual_taps,
        base_channels=train_cfg.perceptual_channels,
        seed=train_cfg.perceptual_seed).to(device)
    betas = (train_cfg.beta1, train_cfg.beta2)
    opt_eg = torch.optim.AdamW(
        list(encoder.parameters()) + list(generator.parameters()),
        lr=train_cfg.lr_generator_encoder, betas=betas,
        weight_decay=train_cfg.weight_decay)
    opt_d = torch.optim.AdamW(
        discriminator.parameters(), lr=train_cfg.lr_discriminator, betas=betas,
        weight_decay=train_cfg.weight_decay)
    rng = torch.Generator(device="cpu").manual_seed(train_cfg.seed + 1)
    return TrainState(model_config=model_cfg, train_config=train_cfg,
                      encoder=encoder, generator=generator,
                      discriminator=discriminator, perceptual=perceptual,
                      opt_eg=opt_eg, opt_d=opt_d, rng=rng)


def _check_finite(state: TrainState, values: dict, batch_indices):
    for name, value in values.items():
        if not torch.isfinite(value).all():
            idx = None if batch_indices is None else batch_indices.tolist()
            raise TrainingDiverged(
                f"non-finite {name} ({float(value.detach())}) at step {state.step}, "
                f"batch indices {idx}")


def train_step(state: TrainState, images: torch.Tensor, labels: torch.Tensor,
               batch_indices=None) -> dict:
    """One D update then one E+G update on the same batch.

    Returns scalar loss metrics. Raises TrainingDiverged (with the batch
    indices, for data triage) the moment any loss goes non-finite.
    """
    cfg = state.train_config
    noise_gen = state.rng if state.generator.cfg.noise_enabled else None

    latents = state.encoder(images, labels)
    recon = state.generator(latents, labels, noise_generator=noise_gen)

    # Discriminator update (generator side detached).
    real_scores = state.discriminator.discriminate(images, labels)
    fake_scores_d = state.discriminator.discriminate(recon.detach(), labels)
    d_loss = hinge_discriminator_loss(real_scores, fake_scores_d)
    _check_finite(state, {"d_loss": d_loss}, batch_indices)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    # Encoder+generator update against the freshly updated discriminator.
    fake_scores_g = state.discriminator.discriminate(recon, labels)
    gan_term = hinge_generator_loss(fake_scores_g)
    perceptual_term = perceptual_loss(images, recon, state.perceptual)
    l1_term = l1_loss(images, recon)
    g_loss = total_generator_loss(gan_term, perceptual_term, l1_term,
                                  state.loss_weights)
    _check_finite(state, {"g_gan": gan_term, "g_perceptual": perceptual_term,
                          "g_l1": l1_term, "g_total": g_loss}, batch_indices)
    state.opt_eg.zero_grad(set_to_none=True)
    g_loss.backward()
    state.opt_eg.step()

    state.step += 1
    return {
        "step": state.step,
        "d_loss": float(d_loss.detach()),
        "g_gan": float(gan_term.detach()),
        "g_perceptual": float(perceptual_term.detach()),
        "g_l1": float(l1_term.detach()),
        "g_total": float(g_loss.detach()),
    }


def fit(state: TrainState, images: torch.Tensor, labels: torch.Tensor,
        steps: int | None = None, checkpoint_path: str | None = None,
        log=None) -> list:
    """Run training up to `steps` (default: the configured total).

    images (N, 3, H, W), labels (N, H, W), fully in memory; batches are
    sampled with replacement from the state RNG. Checkpoints (when a path
    is given) are written every checkpoint_every steps and at the end.
    Returns the per-step metrics history.
    """
    from .checkpoint import save_checkpoint  # local import to avoid a cycle

    cfg = state.train_config
    total = cfg.steps if steps is None else steps
    count = images.shape[0]
    if count < 1:
        raise TrainingDiverged("empty training set")
    history = []
    while state.step < total:
        idx = torch.randint(0, count, (cfg.batch_size,), generator=state.rng)
        metrics = train_step(state, images[idx], labels[idx], batch_indices=idx)
        history.append(metrics)
        if log is not None and (state.step % cfg.log_every == 0 or state.step == total):
            log("step {step}: d={d_loss:.4f} gan={g_gan:.4f} "
                "perc={g_perceptual:.4f} l1={g_l1:.4f} total={g_total:.4f}"
                .format(**metrics))
        if checkpoint_path and cfg.checkpoint_every > 0 \
                and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    if checkpoint_path:
        save_checkpoint(state, checkpoint_path)
    return history
