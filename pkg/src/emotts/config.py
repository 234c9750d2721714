"""Configuration dataclasses and the YAML config file format.

A config file has one section per dataclass::

    mel: {sample_rate_hz: 24000, n_mels: 80, ...}
    model: {hidden_dim: 128, ...}
    npc: {n_blocks: 4, mask_size: 5, ...}
    emotion: {input_dim: 16, ...}
    train: {lr: 0.002, batch_size: 32, ...}
    data: {frontend_dir: null, ssl_layers: 24}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = 24000
    n_mels: int = 80
    frame_shift_ms: float = 12.5
    frame_length_ms: float = 50.0
    fmin_hz: float = 0.0
    fmax_hz: float = 12000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not self.frame_shift_ms < self.frame_length_ms:
            raise ConfigError("frame_shift_ms must be smaller than frame_length_ms")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ConfigError("need 0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2")
        self.hop_samples  # validates integrality

    @property
    def hop_samples(self) -> int:
        hop = Fraction(self.sample_rate_hz) * Fraction(str(self.frame_shift_ms)) / 1000
        if hop.denominator != 1:
            raise ConfigError(f"hop of {float(hop)} samples is not an integer")
        return int(hop)

    @property
    def win_samples(self) -> int:
        win = Fraction(self.sample_rate_hz) * Fraction(str(self.frame_length_ms)) / 1000
        return int(round(win))

    @property
    def n_fft(self) -> int:
        n = 1
        while n < self.win_samples:
            n *= 2
        return n

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop_samples


@dataclass
class BackboneConfig:
    hidden_dim: int = 128
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_heads: int = 2
    ff_mult: int = 2
    conv_kernel: int = 7
    variance_kernel: int = 3
    n_speakers: int = 4
    n_languages: int = 2
    emotion_dim: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ConfigError("hidden_dim must be divisible by n_heads")


@dataclass
class NPCConfig:
    n_blocks: int = 4
    mask_size: int = 5
    kernel_size: int = 3
    vq_groups: int = 1
    codebook_size: int = 64
    code_dim: int = 64
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    npc_input: str = "hidden"

    def __post_init__(self):
        if self.mask_size < 1 or self.mask_size % 2 == 0:
            raise ConfigError("mask_size must be a positive odd integer")
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.code_dim % self.vq_groups:
            raise ConfigError("code_dim must be divisible by vq_groups")
        if self.npc_input not in ("hidden", "mel"):
            raise ConfigError("npc_input must be 'hidden' or 'mel'")


@dataclass
class ReferenceEncoderConfig:
    input_dim: int = 16
    conv_channels: int = 64
    conv_kernel: int = 5
    n_heads: int = 2
    emotion_dim: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.conv_channels % self.n_heads:
            raise ConfigError("conv_channels must be divisible by n_heads")


LOSS_TERMS = ("mel", "pitch", "energy", "dur", "npc", "emo")


@dataclass
class TrainConfig:
    lr: float = 0.002
    batch_size: int = 32
    max_steps: int = 2000
    pretrain_steps: int = 500
    adam_betas: tuple = (0.9, 0.98)
    adam_eps: float = 1e-9
    warmup_steps: int = 0
    grad_clip: float = 1.0
    seed: int = 1234
    loss_weights: dict = field(default_factory=lambda: {k: 1.0 for k in LOSS_TERMS})
    mel_loss: str = "mse"
    labeled_fraction: float = 0.5
    pretrain_language: int = 0
    crop_len: int = 200
    freeze_emotion: bool = False
    use_npc: bool = True
    ckpt_every: int = 500
    bucket_multiplier: int = 4
    num_threads: int = 1
    stage: str = "joint"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mel_loss not in ("mse", "l1"):
            raise ConfigError("mel_loss must be 'mse' or 'l1'")
        if self.stage not in ("pretrain_emotion", "joint"):
            raise ConfigError("stage must be 'pretrain_emotion' or 'joint'")
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise ConfigError("labeled_fraction must lie in [0, 1]")
        unknown = set(self.loss_weights) - set(LOSS_TERMS)
        if unknown:
            raise ConfigError(f"unknown loss terms {sorted(unknown)}")
        self.loss_weights = {k: float(self.loss_weights.get(k, 1.0)) for k in LOSS_TERMS}
        self.adam_betas = tuple(float(b) for b in self.adam_betas)


@dataclass
class DataConfig:
    frontend_dir: str | None = None
    ssl_layers: int = 24


_SECTIONS = {
    "mel": MelConfig,
    "model": BackboneConfig,
    "npc": NPCConfig,
    "emotion": ReferenceEncoderConfig,
    "train": TrainConfig,
    "data": DataConfig,
}

# sections that shape parameters; a checkpoint only loads under a config with the same hash
ARCH_SECTIONS = ("mel", "model", "npc", "emotion", "data")


@dataclass
class ExperimentConfig:
    mel: MelConfig = field(default_factory=MelConfig)
    model: BackboneConfig = field(default_factory=BackboneConfig)
    npc: NPCConfig = field(default_factory=NPCConfig)
    emotion: ReferenceEncoderConfig = field(default_factory=ReferenceEncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.emotion.emotion_dim != self.model.emotion_dim:
            raise ConfigError("emotion.emotion_dim must match model.emotion_dim")
        if self.data.ssl_layers < 2 or self.data.ssl_layers % 2:
            raise ConfigError("data.ssl_layers must be even and >= 2")

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            if name == "train":
                d["adam_betas"] = list(d["adam_betas"])
            out[name] = d
        return out

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            section = d.get(name) or {}
            names = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - names
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**section)
        return cls(**kwargs)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``cfg.replace(train={"max_steps": 10})``."""
        d = self.to_dict()
        for name, updates in sections.items():
            d[name].update(updates)
        return ExperimentConfig.from_dict(d)

    def arch_hash(self, extra: dict | None = None) -> str:
        d = self.to_dict()
        payload = {k: d[k] for k in ARCH_SECTIONS}
        if extra:
            payload["extra"] = extra
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
