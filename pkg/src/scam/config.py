"""Run configuration: one flat key=value namespace over model/train/data.

Config files are plain text: one ``section.field = value`` per line, ``#``
comments, blank lines ignored. Values are parsed as bool ("true"/"false"),
int, float, or string; tuple-valued fields take comma-separated integers.
CLI ``--set section.field=value`` overrides file values. Every field name
below is a valid key, e.g. ``model.latents_per_label = 8``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .discriminator import DiscriminatorConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .generator import GeneratorConfig

_TUPLE_FIELDS = {"encoder_channels", "generator_channels"}


@dataclass
class ModelConfig:
    num_labels: int = 3
    latents_per_label: int = 8
    latent_dim: int = 256
    attn_dim: int = 0  # 0 -> latent_dim
    num_heads: int = 4
    ffn_mult: int = 2
    mask_fill: float = -1.0e9
    sat_residual: str = "input"
    encoder_blocks: int = 6
    encoder_channels: tuple = (64, 128, 256, 512, 512, 512)
    encoder_stride: int = 2
    use_conv: bool = True
    use_self_attention: bool = True
    generator_blocks: int = 7
    base_resolution: int = 4
    generator_channels: tuple = (512, 512, 512, 512, 256, 128, 64)
    use_latent_sat: bool = True
    noise_enabled: bool = True
    upsample_mode: str = "nearest"
    disc_layers: int = 4
    disc_channels: int = 64
    disc_max_channels: int = 512
    use_gradnorm: bool = True
    spectral_norm: bool = False

    @property
    def image_size(self) -> int:
        return self.base_resolution * 2 ** (self.generator_blocks - 1)

    @property
    def num_latents(self) -> int:
        return self.num_labels * self.latents_per_label

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            num_labels=self.num_labels,
            latents_per_label=self.latents_per_label,
            latent_dim=self.latent_dim,
            num_blocks=self.encoder_blocks,
            conv_channels=self.encoder_channels,
            conv_stride=self.encoder_stride,
            use_conv=self.use_conv,
            use_self_attention=self.use_self_attention,
            attn_dim=self.attn_dim,
            num_heads=self.num_heads,
            ffn_mult=self.ffn_mult,
            residual_mode=self.sat_residual,
            mask_fill=self.mask_fill,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            num_labels=self.num_labels,
            latents_per_label=self.latents_per_label,
            latent_dim=self.latent_dim,
            num_blocks=self.generator_blocks,
            base_resolution=self.base_resolution,
            channels=self.generator_channels,
            attn_dim=self.attn_dim,
            num_heads=self.num_heads,
            ffn_mult=self.ffn_mult,
            use_latent_sat=self.use_latent_sat,
            noise_enabled=self.noise_enabled,
            upsample_mode=self.upsample_mode,
            residual_mode=self.sat_residual,
            mask_fill=self.mask_fill,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            num_labels=self.num_labels,
            num_layers=self.disc_layers,
            base_channels=self.disc_channels,
            max_channels=self.disc_max_channels,
            use_gradnorm=self.use_gradnorm,
            spectral_norm=self.spectral_norm,
        )

    def validate(self):
        self.encoder_config()
        self.generator_config()
        self.discriminator_config()


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr_generator_encoder: float = 1.0e-4
    lr_discriminator: float = 4.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000
    lambda_perceptual: float = 10.0
    lambda_l1: float = 10.0
    perceptual_taps: int = 3
    perceptual_channels: int = 16
    perceptual_seed: int = 0
    device: str = "cpu"
    out_dir: str = "runs/default"


@dataclass
class DataConfig:
    root: str = "data"
    train_split: str = "train"
    test_split: str = "test"
    allow_missing_labels: bool = False
    remap_file: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    _SECTIONS = ("model", "train", "data")

    def to_flat(self) -> dict:
        flat = {}
        for section in self._SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                flat[f"{section}.{f.name}"] = value
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        for key, raw in flat.items():
            cfg._assign(key, raw)
        cfg.model.validate()
        return cfg

    def _assign(self, key: str, raw):
        if "." not in key:
            raise ConfigError(f"config key {key!r} must look like section.field")
        section, name = key.split(".", 1)
        if section not in self._SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        obj = getattr(self, section)
        names = {f.name for f in fields(obj)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(obj, name)
        try:
            if name in _TUPLE_FIELDS:
                value = _parse_int_tuple(raw)
            else:
                value = _coerce(raw, type(current))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
        setattr(obj, name, value)


def _parse_int_tuple(raw) -> tuple:
    if isinstance(raw, (tuple, list)):
        return tuple(int(v) for v in raw)
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ValueError("empty tuple")
    return tuple(int(p) for p in parts)


def _coerce(raw, target_type):
    if isinstance(raw, target_type) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    if target_type is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def read_config_file(path: str) -> dict:
    """Parse a flat config file into a {key: raw-string} dict."""
    flat = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
                key, value = stripped.split("=", 1)
                flat[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return flat


def parse_overrides(pairs) -> dict:
    flat = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def load_run_config(path: str | None = None, overrides=None) -> RunConfig:
    flat = read_config_file(path) if path else {}
    flat.update(parse_overrides(overrides))
    return RunConfig.from_flat(flat)


def desk_model_config() -> ModelConfig:
    """Small config for 32x32 synthetic-shapes runs on CPU."""
    return ModelConfig(
        num_labels=3,
        latents_per_label=4,
        latent_dim=64,
        attn_dim=64,
        num_heads=4,
        encoder_blocks=3,
        encoder_channels=(16, 32, 64),
        generator_blocks=4,
        base_resolution=4,
        generator_channels=(64, 48, 32, 16),
        disc_layers=3,
        disc_channels=32,
    )


def desk_run_config() -> RunConfig:
    cfg = RunConfig(model=desk_model_config())
    cfg.train.steps = 2000
    cfg.train.batch_size = 8
    return cfg
