"""Semantic-mask-constrained cross-attention editing: encoder, generator,
adversarial training, transfer operations, metrics, and CLI."""

from .attention import AttentionRecord, SemanticCrossAttention
from .config import DataConfig, ModelConfig, RunConfig, TrainConfig
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .encoder import EncoderConfig, SatEncoder, SatOperation
from .errors import (CheckpointError, ConfigError, DataError, NumericError,
                     ScamError, TrainingDiverged)
from .generator import GeneratorConfig, ScamGenerator
from .masks import (DuplicatedMask, LatentGroupMask, SemanticMask,
                    build_latent_group_mask, duplicate_mask, downsample_mask,
                    positional_encoding_2d)
from .training import TrainState, fit, init_state, train_step
from .transfer import MixPlan, mix_latents, pose_transfer, reconstruct, subject_transfer

__version__ = "0.1.0"
