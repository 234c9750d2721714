"""Hierarchical emotion encoder over a layered SSL stack.

The first half of the layers feeds the shallow branch, the second half the
deep branch.  Each branch owns its softmax layer weights, a mel-style
reference encoder, and a linear emotion classifier used only as a training
signal.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ReferenceEncoderConfig
from ..errors import LabelError

SHALLOW, DEEP = "shallow", "deep"


def group_slice(n_layers, group):
    half = n_layers // 2
    if group == SHALLOW:
        return slice(0, half)
    if group == DEEP:
        return slice(half, n_layers)
    raise ValueError(f"unknown layer group {group!r}")


def weighted_layer_sum(layers, group, logits):
    """Softmax(logits)-weighted sum of the group's layers.

    ``layers`` is [L, T, D] or [B, L, T, D]; ``logits`` has L/2 entries.
    """
    n_layers = layers.shape[-3]
    part = layers[..., group_slice(n_layers, group), :, :]
    if logits.shape[-1] != part.shape[-3]:
        raise ValueError(f"{logits.shape[-1]} weights for {part.shape[-3]} layers")
    w = torch.softmax(logits, dim=-1)
    return torch.einsum("l,...ltd->...td", w, part)


class ConvGLU(nn.Module):
    def __init__(self, channels, kernel, dropout):
        super().__init__()
        self.conv = nn.Conv1d(channels, 2 * channels, kernel, padding=kernel // 2)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        # x [B, T, C]
        h = F.glu(self.conv((x * mask[..., None]).transpose(1, 2)), dim=1).transpose(1, 2)
        return (x + self.dropout(h)) * mask[..., None]


class ReferenceEncoder(nn.Module):
    """Spectral FC, residual temporal convolution, self-attention, average pooling."""

    def __init__(self, cfg: ReferenceEncoderConfig):
        super().__init__()
        c = cfg.conv_channels
        self.spectral = nn.Sequential(
            nn.Linear(cfg.input_dim, c),
            nn.Mish(),
            nn.Dropout(cfg.dropout),
            nn.Linear(c, c),
            nn.Mish(),
            nn.Dropout(cfg.dropout),
        )
        self.temporal = nn.ModuleList([ConvGLU(c, cfg.conv_kernel, cfg.dropout) for _ in range(2)])
        self.attn = nn.MultiheadAttention(c, cfg.n_heads, batch_first=True)
        self.out = nn.Linear(c, cfg.emotion_dim)

    def forward(self, x, mask=None):
        if x.dim() == 2:
            x = x[None]
            mask = None if mask is None else mask[None]
            return self.forward(x, mask)[0]
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        # trailing frames padded in every row are fully masked; dropping them changes nothing
        keep = max(int(mask.sum(1).max()), 1)
        x, mask = x[:, :keep], mask[:, :keep]
        h = self.spectral(x) * mask[..., None]
        for layer in self.temporal:
            h = layer(h, mask)
        a, _ = self.attn(h, h, h, key_padding_mask=~mask, need_weights=False)
        h = self.out(h + a)
        w = mask[..., None].to(h.dtype)
        return (h * w).sum(1) / w.sum(1).clamp(min=1.0)


class HierarchicalEmotionEncoder(nn.Module):
    def __init__(self, cfg: ReferenceEncoderConfig, n_layers, n_classes):
        super().__init__()
        self.n_layers = n_layers
        self.n_classes = n_classes
        self.shallow_logits = nn.Parameter(torch.zeros(n_layers // 2))
        self.deep_logits = nn.Parameter(torch.zeros(n_layers // 2))
        self.shallow_encoder = ReferenceEncoder(cfg)
        self.deep_encoder = ReferenceEncoder(cfg)
        self.shallow_classifier = nn.Linear(cfg.emotion_dim, max(n_classes, 1))
        self.deep_classifier = nn.Linear(cfg.emotion_dim, max(n_classes, 1))

    def layer_weights(self):
        return torch.softmax(self.shallow_logits, -1), torch.softmax(self.deep_logits, -1)

    def forward(self, layers, mask=None):
        """[B, L, T, D] (+ [B, T] mask) -> (shallow [B, E], deep [B, E])."""
        if mask is not None:
            # frames padded in every row never reach the pooled output
            keep = max(int(mask.sum(1).max()), 1)
            layers, mask = layers[..., :keep, :], mask[:, :keep]
        shallow = self.shallow_encoder(weighted_layer_sum(layers, SHALLOW, self.shallow_logits), mask)
        deep = self.deep_encoder(weighted_layer_sum(layers, DEEP, self.deep_logits), mask)
        return shallow, deep

    def classify(self, shallow, deep):
        return self.shallow_classifier(shallow), self.deep_classifier(deep)


def emotion_ce_loss(shallow_logits, deep_logits, labels):
    """Sum of per-head cross entropy over labeled rows; ``labels < 0`` marks unlabeled.

    An all-unlabeled batch yields an exact zero that still connects to the graph.
    """
    labels = torch.as_tensor(labels, device=shallow_logits.device).long()
    n_classes = shallow_logits.shape[-1]
    if torch.any(labels >= n_classes):
        raise LabelError(f"label {int(labels.max())} outside {n_classes} classes")
    keep = labels >= 0
    if not bool(keep.any()):
        return (shallow_logits.sum() + deep_logits.sum()) * 0.0
    return F.cross_entropy(shallow_logits[keep], labels[keep]) + F.cross_entropy(deep_logits[keep], labels[keep])
