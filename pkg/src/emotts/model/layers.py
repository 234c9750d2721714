import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError


class ConditionalLayerNorm(nn.Module):
    """Layer norm whose scale and shift are linear functions of a condition vector.

    The scale layer starts at weight 0 / bias 1 and the shift layer at 0 / 0, so
    a freshly built CLN is exactly a non-affine layer norm for any condition.
    """

    def __init__(self, dim, cond_dim, eps=1e-5):
        super().__init__()
        self.dim = dim
        self.cond_dim = cond_dim
        self.eps = eps
        self.scale = nn.Linear(cond_dim, dim)
        self.shift = nn.Linear(cond_dim, dim)
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.zeros_(self.scale.weight)
        nn.init.ones_(self.scale.bias)
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)

    def forward(self, x, cond):
        if x.shape[-1] != self.dim or cond.shape[-1] != self.cond_dim:
            raise ShapeError(
                f"CLN expects x[..., {self.dim}] and cond[..., {self.cond_dim}], "
                f"got {tuple(x.shape)} and {tuple(cond.shape)}"
            )
        normed = F.layer_norm(x, (self.dim,), eps=self.eps)
        gamma = self.scale(cond)
        beta = self.shift(cond)
        # broadcast [B, H] over the time axis of [B, T, H]
        while gamma.dim() < x.dim():
            gamma = gamma.unsqueeze(-2)
            beta = beta.unsqueeze(-2)
        return gamma * normed + beta


class PlainLayerNorm(nn.LayerNorm):
    def forward(self, x, cond=None):
        return super().forward(x)


def sinusoid_positions(length, dim, device=None):
    pos = torch.arange(length, dtype=torch.float32, device=device)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32, device=device) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, device=device)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table


class FeedForward(nn.Module):
    def __init__(self, dim, mult, dropout, norm):
        super().__init__()
        self.norm = norm
        self.w1 = nn.Linear(dim, dim * mult)
        self.w2 = nn.Linear(dim * mult, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, cond=None):
        h = F.silu(self.w1(self.norm(x, cond)))
        return self.dropout(self.w2(self.dropout(h)))


class ConvModule(nn.Module):
    def __init__(self, dim, kernel, dropout, norm, inner_norm):
        super().__init__()
        self.norm = norm
        self.pointwise_in = nn.Linear(dim, 2 * dim)
        self.depthwise = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.inner_norm = inner_norm
        self.pointwise_out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask, cond=None):
        h = F.glu(self.pointwise_in(self.norm(x, cond)), dim=-1) * mask[..., None]
        h = self.depthwise(h.transpose(1, 2)).transpose(1, 2)
        h = self.pointwise_out(F.silu(self.inner_norm(h, cond)))
        return self.dropout(h)


class ConformerBlock(nn.Module):
    """Macaron conformer block; with ``cond_dim`` every norm becomes a CLN."""

    def __init__(self, dim, n_heads, ff_mult=2, kernel=7, dropout=0.1, cond_dim=None):
        super().__init__()

        def norm():
            return ConditionalLayerNorm(dim, cond_dim) if cond_dim else PlainLayerNorm(dim)

        self.ff1 = FeedForward(dim, ff_mult, dropout, norm())
        self.attn_norm = norm()
        self.attn = nn.MultiheadAttention(dim, n_heads, batch_first=True)
        self.conv = ConvModule(dim, kernel, dropout, norm(), norm())
        self.ff2 = FeedForward(dim, ff_mult, dropout, norm())
        self.final_norm = norm()
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask, cond=None):
        # mask: [B, T] bool, True on valid frames
        m = mask[..., None].to(x.dtype)
        x = x + 0.5 * self.ff1(x, cond)
        h = self.attn_norm(x, cond)
        h, _ = self.attn(h, h, h, key_padding_mask=~mask, need_weights=False)
        x = x + self.dropout(h)
        x = x + self.conv(x, m[..., 0], cond)
        x = x + 0.5 * self.ff2(x, cond)
        return self.final_norm(x, cond) * m


class ConformerStack(nn.Module):
    def __init__(self, n_blocks, dim, n_heads, ff_mult, kernel, dropout, cond_dim=None):
        super().__init__()
        self.blocks = nn.ModuleList(
            ConformerBlock(dim, n_heads, ff_mult, kernel, dropout, cond_dim) for _ in range(n_blocks)
        )

    def forward(self, x, mask, cond=None):
        x = x + sinusoid_positions(x.shape[1], x.shape[2], x.device)[None]
        x = x * mask[..., None]
        for block in self.blocks:
            x = block(x, mask, cond)
        return x
