"""Log-mel analysis, Griffin-Lim inversion and PCM output."""

from __future__ import annotations

import functools
import wave
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import MelConfig
from .container import atomic_path
from .errors import AlignmentError, InvalidInputError, ShapeError


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [T, n_mels], natural log
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ShapeError(f"mel must be [T>=1, n_mels], got {self.frames.shape}")
        if self.frames.shape[1] != self.config.n_mels:
            raise ShapeError(f"mel has {self.frames.shape[1]} bins, config says {self.config.n_mels}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-scale filters, area-normalised, shape [n_mels, n_fft // 2 + 1]."""
    n_freqs = cfg.n_fft // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate_hz / 2, n_freqs)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(cfg.fmin_hz), _hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lower) / (center - lower)
    down = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (upper - lower))
    fb.setflags(write=False)
    return fb


@functools.lru_cache(maxsize=8)
def _inverse_filterbank(cfg: MelConfig) -> np.ndarray:
    inv = np.linalg.pinv(mel_filterbank(cfg))
    inv.setflags(write=False)
    return inv


@functools.lru_cache(maxsize=8)
def analysis_window(cfg: MelConfig) -> np.ndarray:
    """Periodic Hann of the frame length, zero-padded to ``n_fft`` (centred)."""
    win = np.hanning(cfg.win_samples + 1)[:-1]
    left = (cfg.n_fft - cfg.win_samples) // 2
    out = np.zeros(cfg.n_fft)
    out[left : left + cfg.win_samples] = win
    out.setflags(write=False)
    return out


def stft(signal, cfg: MelConfig) -> np.ndarray:
    """Centre-padded STFT, [T, n_fft//2 + 1] with T = len // hop + 1."""
    x = np.asarray(signal, dtype=np.float64)
    pad = cfg.n_fft // 2
    mode = "reflect" if x.shape[0] > pad else "constant"
    x = np.pad(x, pad, mode=mode)
    n_frames = 1 + (x.shape[0] - cfg.n_fft) // cfg.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[:: cfg.hop_samples][:n_frames]
    return np.fft.rfft(frames * analysis_window(cfg), axis=-1)


def istft(spec, cfg: MelConfig) -> np.ndarray:
    """Windowed overlap-add inverse of :func:`stft`; output length (T-1) * hop."""
    window = analysis_window(cfg)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=-1) * window
    signal, norm = kernels.overlap_add(frames, cfg.hop_samples, window * window)
    signal = np.where(norm > 1e-8, signal / np.maximum(norm, 1e-8), 0.0)
    pad = cfg.n_fft // 2
    length = (spec.shape[0] - 1) * cfg.hop_samples
    return signal[pad : pad + length]


def compute_mel(waveform, cfg: MelConfig | None = None) -> MelSpectrogram:
    cfg = cfg or MelConfig()
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] == 0:
        raise InvalidInputError("waveform must be a non-empty 1-D sequence")
    mag = np.abs(stft(x, cfg))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def griffin_lim(mel, cfg: MelConfig | None = None, n_iters: int = 60) -> np.ndarray:
    """Invert a log-mel spectrogram to audio.

    The linear magnitude comes from the filterbank pseudo-inverse (clamped at 0);
    phase starts at zero so the result is deterministic.
    """
    if isinstance(mel, MelSpectrogram):
        cfg = cfg or mel.config
        mel = mel.frames
    cfg = cfg or MelConfig()
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[1] != cfg.n_mels:
        raise ShapeError(f"mel of shape {mel.shape} does not match n_mels={cfg.n_mels}")
    energies = np.exp(mel)
    energies[mel <= np.log(cfg.log_floor)] = 0.0
    mag = np.maximum(energies @ _inverse_filterbank(cfg).T, 0.0)
    phase = np.ones_like(mag, dtype=np.complex128)
    for _ in range(n_iters):
        y = istft(mag * phase, cfg)
        rebuilt = stft(y, cfg)[: mag.shape[0]]
        phase = rebuilt / np.maximum(np.abs(rebuilt), 1e-12)
        phase[np.abs(rebuilt) <= 1e-12] = 1.0
    return istft(mag * phase, cfg)


def frame_energy(mel) -> np.ndarray:
    """Per-frame L2 norm of the log-mel frame (the energy target definition)."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    return np.linalg.norm(frames.astype(np.float64), axis=1)


def phone_average(frame_values, durations) -> np.ndarray:
    """Mean of ``frame_values`` over each phoneme's span; zero-length phonemes give 0."""
    values = np.asarray(frame_values, dtype=np.float64)
    durations = np.asarray(durations)
    if values.ndim != 1:
        raise InvalidInputError("frame_values must be 1-D")
    if np.any(durations < 0) or not np.all(np.equal(np.mod(durations, 1), 0)):
        raise InvalidInputError("durations must be non-negative integers")
    if int(durations.sum()) != values.shape[0]:
        raise AlignmentError(f"durations sum to {int(durations.sum())} but there are {values.shape[0]} frames")
    return kernels.phone_average(values, durations.astype(np.int64))


def phone_level_targets(log_f0_frames, mel, durations):
    """Phone-level (pitch, energy) targets from frame-level log-F0 and a mel."""
    return phone_average(log_f0_frames, durations), phone_average(frame_energy(mel), durations)


def write_wav(path, samples, sample_rate_hz: int) -> None:
    """16-bit PCM mono; values are clipped to [-1, 1]."""
    pcm = (np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0).round().astype("<i2")
    with atomic_path(path) as tmp:
        with wave.open(str(tmp), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(int(sample_rate_hz))
            fh.writeframes(pcm.tobytes())


def read_wav(path):
    with wave.open(str(path), "rb") as fh:
        rate = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32767.0, rate
