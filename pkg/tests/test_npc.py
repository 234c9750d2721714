import time

import pytest
import torch
from torch.autograd.functional import jacobian

from emotts.config import NPCConfig
from emotts.errors import InputTooShortError
from emotts.model import MaskedContext, NPCModule, VectorQuantizer, npc_loss
from emotts.model.npc import code_entropy


def context_jacobian(mask_size, t=64, h=32):
    torch.manual_seed(mask_size)
    ctx = MaskedContext(h, NPCConfig(mask_size=mask_size, code_dim=16)).double()
    for p in ctx.parameters():
        torch.nn.init.normal_(p, std=0.3)
    x = torch.randn(1, t, h, dtype=torch.double)
    jac = jacobian(lambda inp: ctx(inp), x)  # [1, T, C, 1, T, H]
    return jac[0, :, :, 0].abs().amax(dim=(1, 3))  # [T_out, T_in]


@pytest.mark.parametrize("mask_size", [3, 5])
def test_masked_band_has_zero_jacobian(mask_size):
    start = time.perf_counter()
    mag = context_jacobian(mask_size)
    r = mask_size // 2
    t = mag.shape[0]
    band = torch.zeros_like(mag, dtype=torch.bool)
    for i in range(t):
        band[i, max(0, i - r) : i + r + 1] = True
    assert float(mag[band].max()) == 0.0
    # context just outside the band does reach the output
    assert float(mag[10, 10 - r - 1]) > 0 and float(mag[10, 10 + r + 1]) > 0
    assert time.perf_counter() - start < 10


def test_too_short_input():
    ctx = MaskedContext(4, NPCConfig(mask_size=5))
    with pytest.raises(InputTooShortError):
        ctx(torch.randn(1, 5, 4))


def test_vq_outputs_codebook_rows_and_exact_match():
    vq = VectorQuantizer(4, 6).eval()
    h = torch.randn(2, 5, 4)
    q, idx, _ = vq(h)
    flat_q = q.reshape(-1, 4)
    rows = vq.codebook[0]
    assert all(any(torch.equal(v, r) for r in rows) for v in flat_q)
    exact = rows[[1, 3]][None]
    q, _, commit = vq(exact)
    assert torch.equal(q, exact) and float(commit) == 0.0


def test_vq_straight_through_matches_finite_difference():
    torch.manual_seed(0)
    vq = VectorQuantizer(2, 8).eval()
    vq.codebook[0] = torch.randn(8, 2) * 3
    h = torch.tensor([[0.3, -0.2]], dtype=torch.float64, requires_grad=True)
    vq = vq.double()

    def downstream(q):
        return (q[..., 0] ** 2 + torch.sin(q[..., 1]) * q[..., 0]).sum()

    q, _, _ = vq(h)
    downstream(q).backward()
    # straight-through: d loss/d h equals d loss/d q evaluated at q
    qd = q.detach().clone()
    eps = 1e-6
    fd = torch.zeros(2, dtype=torch.float64)
    for k in range(2):
        e = torch.zeros_like(qd)
        e[0, k] = eps
        fd[k] = (downstream(qd + e) - downstream(qd - e)) / (2 * eps)
    rel = (h.grad[0] - fd).norm() / fd.norm()
    assert float(rel) < 1e-4


def test_vq_ema_seeds_and_moves_codebook():
    torch.manual_seed(0)
    vq = VectorQuantizer(4, 4, decay=0.5).train()
    h = torch.randn(1, 20, 4) + 5
    vq(h)
    assert bool(vq.initialized)
    # seeded rows come from the batch, so every row is near the data
    assert float(vq.codebook[0].mean()) > 3


def test_vq_commitment_definition():
    vq = VectorQuantizer(2, 2).eval()
    vq.codebook[0] = torch.tensor([[0.0, 0.0], [10.0, 10.0]])
    h = torch.tensor([[[1.0, 2.0], [9.0, 9.0]]])
    _, idx, commit = vq(h)
    assert idx.squeeze(-1).tolist() == [[0, 1]]
    assert float(commit) == pytest.approx((5.0 + 2.0) / 2)


def test_npc_loss_matches_scalar_loop():
    torch.manual_seed(1)
    pred, target = torch.randn(2, 5, 3), torch.randn(2, 5, 3)
    mask = torch.tensor([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=torch.bool)
    total, count = 0.0, 0
    for b in range(2):
        for t in range(5):
            if mask[b, t]:
                for c in range(3):
                    total += abs(float(pred[b, t, c] - target[b, t, c]))
                    count += 1
    assert float(npc_loss(pred, target, mask)) == pytest.approx(total / count, rel=1e-6)


def test_module_loss_combines_terms():
    torch.manual_seed(0)
    mod = NPCModule(8, 6, NPCConfig(code_dim=8, codebook_size=4, commitment_weight=0.5))
    loss, l1, commit, idx = mod(torch.randn(2, 12, 8), torch.randn(2, 12, 6))
    assert float(loss.detach()) == pytest.approx(float(l1.detach()) + 0.5 * float(commit.detach()), rel=1e-6)
    assert idx.shape == (2, 12, 1)


def test_code_entropy():
    assert code_entropy(torch.zeros(10, 1, dtype=torch.long), 4) == 0.0
    uniform = torch.arange(4).repeat(5)[:, None]
    assert code_entropy(uniform, 4) == pytest.approx(float(torch.log(torch.tensor(4.0))))
