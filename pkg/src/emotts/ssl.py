"""Layered self-supervised representation stacks (real or synthetic).

Stack files use the EMTF container with rank 3, ``[layers, frames, dim]``.
Layer index 0 is the first transformer layer output; the extractor must drop
the pre-transformer embedding output.  A companion extraction script writes
one ``<utt_id>.ssl`` file per utterance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .audio import MelSpectrogram
from .container import read_emtf, write_emtf
from .errors import InvariantError


@dataclass
class SSLFeatureStack:
    layers: np.ndarray  # [L, T, D]
    frame_rate_hz: float = 80.0
    valid_frames: int | None = None  # frames before zero padding

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.float32)
        if self.layers.ndim != 3:
            raise InvariantError(f"stack must be [L, T, D], got shape {self.layers.shape}")
        n_layers = self.layers.shape[0]
        if n_layers < 2 or n_layers % 2:
            raise InvariantError(f"stack needs an even number (>= 2) of layers, got {n_layers}")
        if not np.all(np.isfinite(self.layers)):
            raise InvariantError("stack contains non-finite values")
        if self.valid_frames is None:
            self.valid_frames = self.n_frames

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_frames(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


def save_stack(stack: SSLFeatureStack, path) -> None:
    write_emtf(path, stack.layers)


def load_stack(path, frame_rate_hz: float = 80.0) -> SSLFeatureStack:
    return SSLFeatureStack(read_emtf(path, rank=3), frame_rate_hz)


def synth_stack(mel, n_layers: int = 24, dim: int = 16, seed: int = 0) -> SSLFeatureStack:
    """Deterministic stand-in for a pretrained SSL model.

    Layer ``l`` (1-based) projects the mel through a fixed Gaussian matrix
    seeded by ``(seed, l)`` and then box-smooths over ``l - 1`` frames each side,
    so early layers keep frame detail and late layers are temporally blurred.
    """
    if isinstance(mel, MelSpectrogram):
        frame_rate = mel.config.frame_rate_hz
        mel = mel.frames
    else:
        frame_rate = 80.0
    mel = np.asarray(mel, dtype=np.float64)
    out = np.empty((n_layers, mel.shape[0], dim), dtype=np.float32)
    for layer in range(1, n_layers + 1):
        rng = np.random.default_rng([seed, layer])
        proj = rng.standard_normal((mel.shape[1], dim)) / np.sqrt(mel.shape[1])
        out[layer - 1] = kernels.box_smooth(mel @ proj, layer - 1)
    return SSLFeatureStack(out, frame_rate)


def random_crop(stack: SSLFeatureStack, crop_len: int = 200, rng=None) -> SSLFeatureStack:
    """Contiguous ``crop_len``-frame window; short stacks are zero-padded at the end."""
    if crop_len < 1:
        raise ValueError("crop_len must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    n_layers, t, d = stack.layers.shape
    if t >= crop_len:
        start = int(rng.integers(0, t - crop_len + 1))
        return SSLFeatureStack(stack.layers[:, start : start + crop_len], stack.frame_rate_hz, crop_len)
    padded = np.zeros((n_layers, crop_len, d), dtype=np.float32)
    padded[:, :t] = stack.layers
    return SSLFeatureStack(padded, stack.frame_rate_hz, t)
