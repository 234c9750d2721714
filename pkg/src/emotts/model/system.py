import torch
import torch.nn as nn

from ..config import ExperimentConfig
from .acoustic import AcousticModel, durations_from_log, length_regulate
from .emotion import HierarchicalEmotionEncoder
from .npc import NPCModule


class EmotionalTTS(nn.Module):
    """Backbone + hierarchical emotion encoder (+ training-only NPC module)."""

    def __init__(self, cfg: ExperimentConfig, n_symbols, n_emotions, with_npc=True):
        super().__init__()
        self.cfg = cfg
        n_mels = cfg.mel.n_mels
        self.acoustic = AcousticModel(cfg.model, n_symbols, n_mels)
        self.emotion = HierarchicalEmotionEncoder(cfg.emotion, cfg.data.ssl_layers, n_emotions)
        npc_in = cfg.model.hidden_dim if cfg.npc.npc_input == "hidden" else n_mels
        self.npc = NPCModule(npc_in, n_mels, cfg.npc) if with_npc else None

    def embed(self, ssl, ssl_mask=None):
        return self.emotion(ssl, ssl_mask)

    def forward(self, batch, with_npc=True):
        """Teacher-forced pass.  Returns a dict of tensors used by the losses."""
        shallow, deep = self.embed(batch["ssl"], batch["ssl_mask"])
        src_mask = batch["src_mask"]
        hidden = self.acoustic.encode_text(batch["ids"], src_mask, batch["language_id"], batch["speaker_id"], deep)
        var = self.acoustic.predict_variances(hidden, src_mask)
        hidden = self.acoustic.add_variances(hidden, src_mask, batch["pitch"], batch["energy"])
        frames, frame_mask = length_regulate(hidden, batch["durations"], src_mask)
        mel = self.acoustic.decode_mel(frames, frame_mask, shallow, deep)
        out = {
            "shallow": shallow,
            "deep": deep,
            "variances": var,
            "frames": frames,
            "frame_mask": frame_mask,
            "mel": mel,
        }
        if with_npc and self.npc is not None:
            src = frames if self.cfg.npc.npc_input == "hidden" else batch["mel"]
            out["npc"] = self.npc(src, batch["mel"], frame_mask)
        return out

    @torch.no_grad()
    def infer(self, ids, language_id, speaker_id, shallow, deep, src_mask=None):
        """Inference path: predicted durations/pitch/energy drive the decoder."""
        if src_mask is None:
            src_mask = ids != 0
        hidden = self.acoustic.encode_text(ids, src_mask, language_id, speaker_id, deep)
        var = self.acoustic.predict_variances(hidden, src_mask)
        hidden = self.acoustic.add_variances(hidden, src_mask, var.pitch, var.energy)
        durations = durations_from_log(var.log_durations, src_mask)
        frames, frame_mask = length_regulate(hidden, durations, src_mask)
        mel = self.acoustic.decode_mel(frames, frame_mask, shallow, deep)
        return mel, durations, frame_mask, var
