from dataclasses import dataclass

import torch
import torch.nn as nn

from ..config import BackboneConfig
from ..errors import InvalidInputError, RegistryError
from .layers import ConformerStack


@dataclass
class VariancePrediction:
    log_durations: torch.Tensor  # [B, N]
    pitch: torch.Tensor
    energy: torch.Tensor


class VariancePredictor(nn.Module):
    """Two conv/ReLU/LayerNorm layers and a scalar projection, one value per phoneme."""

    def __init__(self, dim, kernel, dropout):
        super().__init__()
        self.convs = nn.ModuleList([nn.Conv1d(dim, dim, kernel, padding=kernel // 2) for _ in range(2)])
        self.norms = nn.ModuleList([nn.LayerNorm(dim) for _ in range(2)])
        self.dropout = nn.Dropout(dropout)
        self.proj = nn.Linear(dim, 1)

    def forward(self, x, mask):
        m = mask[..., None].to(x.dtype)
        h = x * m
        for conv, norm in zip(self.convs, self.norms):
            h = torch.relu(conv(h.transpose(1, 2))).transpose(1, 2)
            h = self.dropout(norm(h)) * m
        return self.proj(h).squeeze(-1) * mask


def length_regulate(hidden, durations, mask=None):
    """Repeat phoneme rows by their durations.

    ``hidden`` is [N, H] or [B, N, H] with integer ``durations`` of matching
    leading shape.  Batched input returns ``(frames [B, T_max, H], frame_mask)``;
    unbatched input returns the [sum(durations), H] matrix.
    """
    durations = torch.as_tensor(durations, device=hidden.device)
    if hidden.dim() == 2:
        if durations.shape != hidden.shape[:1]:
            raise InvalidInputError(f"{durations.shape[0]} durations for {hidden.shape[0]} rows")
        if torch.any(durations < 0):
            raise InvalidInputError("negative duration")
        return torch.repeat_interleave(hidden, durations.long(), dim=0)
    if durations.shape != hidden.shape[:2]:
        raise InvalidInputError("durations must be [B, N] matching hidden")
    if torch.any(durations < 0):
        raise InvalidInputError("negative duration")
    if mask is not None:
        durations = durations * mask
    durations = durations.long()
    lengths = durations.sum(dim=1)
    t_max = max(int(lengths.max()), 1)
    # frame t belongs to the first phoneme whose cumulative end exceeds t
    ends = durations.cumsum(dim=1)
    frames_idx = torch.arange(t_max, device=hidden.device).expand(hidden.shape[0], t_max)
    phone = torch.searchsorted(ends, frames_idx.contiguous(), right=True).clamp(max=hidden.shape[1] - 1)
    frame_mask = frames_idx < lengths[:, None]
    out = hidden.gather(1, phone[..., None].expand(-1, -1, hidden.shape[2]))
    return out * frame_mask[..., None].to(out.dtype), frame_mask


def durations_from_log(log_durations, mask=None):
    """Inference rule: round(exp(log d)), at least one frame per real phoneme."""
    d = torch.clamp(torch.round(torch.exp(log_durations)), min=1).long()
    if mask is not None:
        d = d * mask.long()
    return d


class AcousticModel(nn.Module):
    """Conformer text encoder, variance adaptor and CLN-conditioned conformer decoder."""

    def __init__(self, cfg: BackboneConfig, n_symbols, n_mels):
        super().__init__()
        self.cfg = cfg
        h, e = cfg.hidden_dim, cfg.emotion_dim
        self.phoneme_embedding = nn.Embedding(n_symbols + 1, h, padding_idx=0)
        self.language_embedding = nn.Embedding(cfg.n_languages, h)
        self.speaker_embedding = nn.Embedding(cfg.n_speakers, h)
        self.encoder = ConformerStack(
            cfg.n_encoder_blocks, h, cfg.n_heads, cfg.ff_mult, cfg.conv_kernel, cfg.dropout
        )
        self.deep_proj = nn.Linear(e, h)
        self.duration_predictor = VariancePredictor(h, cfg.variance_kernel, cfg.dropout)
        self.pitch_predictor = VariancePredictor(h, cfg.variance_kernel, cfg.dropout)
        self.energy_predictor = VariancePredictor(h, cfg.variance_kernel, cfg.dropout)
        self.pitch_embed = nn.Linear(1, h)
        self.energy_embed = nn.Linear(1, h)
        self.shallow_proj = nn.Linear(e, h)
        self.decoder = ConformerStack(
            cfg.n_decoder_blocks, h, cfg.n_heads, cfg.ff_mult, cfg.conv_kernel, cfg.dropout, cond_dim=2 * e
        )
        self.mel_out = nn.Linear(h, n_mels)

    def _check_ids(self, language_id, speaker_id):
        if torch.any(language_id < 0) or torch.any(language_id >= self.cfg.n_languages):
            raise RegistryError(f"language id outside [0, {self.cfg.n_languages})")
        if torch.any(speaker_id < 0) or torch.any(speaker_id >= self.cfg.n_speakers):
            raise RegistryError(f"speaker id outside [0, {self.cfg.n_speakers})")

    def encode_text(self, ids, mask, language_id, speaker_id, deep):
        """[B, N] ids -> [B, N, H]; speaker LUT and projected deep emotion added after the encoder."""
        self._check_ids(language_id, speaker_id)
        x = self.phoneme_embedding(ids) + self.language_embedding(language_id)[:, None, :]
        x = self.encoder(x, mask)
        x = x + self.speaker_embedding(speaker_id)[:, None, :] + self.deep_proj(deep)[:, None, :]
        return x * mask[..., None]

    def predict_variances(self, hidden, mask):
        return VariancePrediction(
            self.duration_predictor(hidden, mask),
            self.pitch_predictor(hidden, mask),
            self.energy_predictor(hidden, mask),
        )

    def add_variances(self, hidden, mask, pitch, energy):
        """Embed (teacher-forced or predicted) pitch/energy and add them to ``hidden``."""
        v = self.pitch_embed(pitch[..., None]) + self.energy_embed(energy[..., None])
        return hidden + v * mask[..., None]

    def decode_mel(self, frames, frame_mask, shallow, deep):
        x = frames + self.shallow_proj(shallow)[:, None, :]
        cond = torch.cat([shallow, deep], dim=-1)
        x = self.decoder(x, frame_mask, cond)
        return self.mel_out(x) * frame_mask[..., None]
