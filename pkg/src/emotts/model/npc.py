"""Non-autoregressive predictive coding over frame-level hidden features.

The context for frame ``t`` is built from a causal conv stack read at
``t - s`` and a mirrored anti-causal stack read at ``t + s`` with
``s = mask_size // 2 + 1``, summed over every layer.  Frames closer than ``s``
to ``t`` (including ``t`` itself) therefore never reach ``context[t]``, however
many layers are stacked.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import NPCConfig
from ..errors import InputTooShortError, ShapeError


def _shift(x, steps):
    """Shift [B, T, C] along time; positive moves content later, zero fill."""
    if steps == 0:
        return x
    t = x.shape[1]
    if abs(steps) >= t:
        return torch.zeros_like(x)
    if steps > 0:
        return F.pad(x[:, : t - steps], (0, 0, steps, 0))
    return F.pad(x[:, -steps:], (0, 0, 0, -steps))


class MaskedContext(nn.Module):
    def __init__(self, in_dim, cfg: NPCConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(in_dim, cfg.code_dim)
        k = cfg.kernel_size
        self.left = nn.ModuleList(nn.Conv1d(cfg.code_dim, cfg.code_dim, k) for _ in range(cfg.n_blocks))
        self.right = nn.ModuleList(nn.Conv1d(cfg.code_dim, cfg.code_dim, k) for _ in range(cfg.n_blocks))
        for m in [self.in_proj, *self.left, *self.right]:
            nn.init.zeros_(m.bias)

    @property
    def offset(self):
        return self.cfg.mask_size // 2 + 1

    def forward(self, hidden, mask=None):
        b, t, _ = hidden.shape
        if t <= self.cfg.mask_size:
            raise InputTooShortError(f"need more than {self.cfg.mask_size} frames, got {t}")
        if mask is None:
            mask = torch.ones(b, t, dtype=torch.bool, device=hidden.device)
        m = mask[:, None, :].to(hidden.dtype)
        k = self.cfg.kernel_size
        x = (self.in_proj(hidden) * mask[..., None]).transpose(1, 2)
        left = right = x
        context = 0
        for conv_l, conv_r in zip(self.left, self.right):
            left = (left + F.gelu(conv_l(F.pad(left, (k - 1, 0))))) * m
            right = (right + F.gelu(conv_r(F.pad(right, (0, k - 1))))) * m
            context = context + _shift(left.transpose(1, 2), self.offset) + _shift(right.transpose(1, 2), -self.offset)
        return context * mask[..., None]


class VectorQuantizer(nn.Module):
    """Nearest-neighbour codebook with EMA updates and a straight-through gradient.

    ``groups > 1`` splits each vector into equal chunks quantised by separate
    codebooks.  Codebook rows are re-seeded from the first training batch.
    """

    def __init__(self, code_dim, codebook_size, groups=1, decay=0.99, eps=1e-5):
        super().__init__()
        self.groups = groups
        self.codebook_size = codebook_size
        self.sub_dim = code_dim // groups
        self.decay = decay
        self.eps = eps
        codebook = torch.randn(groups, codebook_size, self.sub_dim)
        self.register_buffer("codebook", codebook)
        self.register_buffer("ema_count", torch.ones(groups, codebook_size))
        self.register_buffer("ema_sum", codebook.clone())
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    def nearest(self, flat):
        # flat [N, G, d] -> indices [N, G]
        dists = (
            flat.pow(2).sum(-1, keepdim=True)
            - 2 * torch.einsum("ngd,gkd->ngk", flat, self.codebook)
            + self.codebook.pow(2).sum(-1)[None]
        )
        return dists.argmin(-1)

    def lookup(self, indices):
        g = torch.arange(self.groups, device=indices.device)[None, :].expand_as(indices)
        return self.codebook[g, indices]

    @torch.no_grad()
    def _seed_from(self, flat):
        n = flat.shape[0]
        gen = torch.Generator().manual_seed(0)
        for g in range(self.groups):
            pick = torch.randint(0, n, (self.codebook_size,), generator=gen)
            rows = flat[pick, g] + 1e-3 * torch.randn(self.codebook_size, self.sub_dim, generator=gen)
            self.codebook[g] = rows
            self.ema_sum[g] = rows
        self.ema_count.fill_(1.0)
        self.initialized.fill_(True)

    @torch.no_grad()
    def _ema_update(self, flat, indices):
        onehot = F.one_hot(indices, self.codebook_size).to(flat.dtype)  # [N, G, K]
        counts = onehot.sum(0)
        sums = torch.einsum("ngk,ngd->gkd", onehot, flat)
        self.ema_count.mul_(self.decay).add_(counts, alpha=1 - self.decay)
        self.ema_sum.mul_(self.decay).add_(sums, alpha=1 - self.decay)
        total = self.ema_count.sum(-1, keepdim=True)
        smoothed = (self.ema_count + self.eps) / (total + self.codebook_size * self.eps) * total
        self.codebook.copy_(self.ema_sum / smoothed[..., None])

    def forward(self, h, mask=None):
        """Returns ``(q, indices, commitment)`` with ``q`` straight-through w.r.t. ``h``.

        ``commitment`` is the mean over (valid) vectors of ``||h - sg(q)||^2``.
        """
        if h.shape[-1] != self.groups * self.sub_dim:
            raise ShapeError(f"expected code_dim {self.groups * self.sub_dim}, got {h.shape[-1]}")
        lead = h.shape[:-1]
        flat = h.reshape(-1, self.groups, self.sub_dim)
        valid = mask.reshape(-1) if mask is not None else torch.ones(flat.shape[0], dtype=torch.bool, device=h.device)
        if self.training and not bool(self.initialized) and bool(valid.any()):
            self._seed_from(flat.detach()[valid])
        indices = self.nearest(flat.detach())
        q = self.lookup(indices)
        if self.training and bool(valid.any()):
            self._ema_update(flat.detach()[valid], indices[valid])
        sq = (flat - q.detach()).pow(2).sum((-1, -2))
        w = valid.to(h.dtype)
        commitment = (sq * w).sum() / w.sum().clamp(min=1.0)
        # forward value is exactly the codebook row; gradient passes to h unchanged
        q = q.detach() + (flat - flat.detach())
        return q.reshape(h.shape), indices.reshape(*lead, self.groups), commitment


def npc_loss(predicted, target, mask=None):
    """Mean absolute error over all (valid) cells."""
    if predicted.shape != target.shape:
        raise ShapeError(f"prediction {tuple(predicted.shape)} vs target {tuple(target.shape)}")
    err = (predicted - target).abs()
    if mask is None:
        return err.mean()
    w = mask[..., None].to(err.dtype).expand_as(err)
    return (err * w).sum() / w.sum().clamp(min=1.0)


class NPCModule(nn.Module):
    def __init__(self, in_dim, n_mels, cfg: NPCConfig):
        super().__init__()
        self.cfg = cfg
        self.context = MaskedContext(in_dim, cfg)
        self.vq = VectorQuantizer(cfg.code_dim, cfg.codebook_size, cfg.vq_groups, cfg.ema_decay)
        self.head = nn.Linear(cfg.code_dim, n_mels)

    def predict(self, hidden, mask=None):
        q, indices, commitment = self.vq(self.context(hidden, mask), mask)
        return self.head(q), indices, commitment

    def forward(self, hidden, target_mel, mask=None):
        """Returns ``(loss, l1, commitment, indices)``; loss = L1 + weight * commitment."""
        if hidden.shape[:2] != target_mel.shape[:2]:
            raise ShapeError("hidden and target mel must have the same number of frames")
        pred, indices, commitment = self.predict(hidden, mask)
        l1 = npc_loss(pred, target_mel, mask)
        return l1 + self.cfg.commitment_weight * commitment, l1, commitment, indices


def code_entropy(indices, codebook_size, mask=None):
    """Entropy (nats) of the empirical code-usage distribution."""
    idx = indices.reshape(-1, indices.shape[-1])
    if mask is not None:
        idx = idx[mask.reshape(-1)]
    counts = torch.bincount(idx.reshape(-1), minlength=codebook_size).double()
    p = counts / counts.sum().clamp(min=1)
    p = p[p > 0]
    return float(-(p * p.log()).sum())
