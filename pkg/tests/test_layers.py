import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from emotts import kernels
from emotts.errors import InvalidInputError, ShapeError
from emotts.model import ConditionalLayerNorm, ConformerBlock, durations_from_log, length_regulate


def test_cln_is_layer_norm_at_init():
    torch.manual_seed(0)
    cln = ConditionalLayerNorm(32, 24)
    worst = 0.0
    for _ in range(100):
        x = torch.randn(3, 7, 32) * torch.rand(1) * 10
        cond = torch.randn(3, 1, 24) * 5
        worst = max(worst, float((cln(x, cond) - F.layer_norm(x, (32,))).detach().abs().max()))
    assert worst < 1e-6


def test_cln_condition_changes_output_after_training_step():
    torch.manual_seed(0)
    cln = ConditionalLayerNorm(8, 4)
    with torch.no_grad():
        cln.scale.weight.normal_()
    x = torch.randn(2, 5, 8)
    assert not torch.allclose(cln(x, torch.zeros(2, 1, 4)), cln(x, torch.ones(2, 1, 4)))


def test_cln_shape_mismatch():
    with pytest.raises(ShapeError):
        ConditionalLayerNorm(8, 4)(torch.randn(2, 8), torch.randn(2, 5))


def test_conformer_block_respects_padding():
    torch.manual_seed(0)
    block = ConformerBlock(16, 2, 2, 3, 0.0).eval()
    x = torch.randn(1, 6, 16)
    mask = torch.tensor([[True] * 4 + [False] * 2])
    padded = x.clone()
    padded[:, 4:] = 100.0
    a = block(x, mask)
    b = block(padded, mask)
    assert torch.allclose(a[:, :4], b[:, :4], atol=1e-5)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=1, max_size=25))
def test_length_regulator_total(durs):
    hidden = torch.randn(len(durs), 3)
    out = length_regulate(hidden, torch.tensor(durs))
    assert out.shape[0] == sum(durs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=5, max_size=5), min_size=1, max_size=4))
def test_length_regulator_matches_repeat_kernel(rows):
    durs = torch.tensor(rows)
    hidden = torch.randn(len(rows), 5, 3)
    frames, mask = length_regulate(hidden, durs)
    for b, row in enumerate(rows):
        want = kernels.backend("numpy").expand(hidden[b].numpy(), row)
        n = sum(row)
        assert np.array_equal(frames[b, :n].numpy(), want)
        assert not frames[b, n:].any() and int(mask[b].sum()) == n


def test_length_regulator_identity_on_ones():
    hidden = torch.randn(9, 4)
    assert torch.equal(length_regulate(hidden, torch.ones(9, dtype=torch.long)), hidden)


def test_length_regulator_batched_mask():
    hidden = torch.arange(12.0).reshape(2, 3, 2)
    frames, mask = length_regulate(hidden, torch.tensor([[1, 2, 0], [3, 0, 1]]))
    assert frames.shape == (2, 4, 2)
    assert mask.tolist() == [[True, True, True, False], [True, True, True, True]]
    assert torch.equal(frames[0, 1], hidden[0, 1]) and torch.equal(frames[1, 3], hidden[1, 2])


def test_length_regulator_rejects_negative():
    with pytest.raises(InvalidInputError):
        length_regulate(torch.randn(2, 3), torch.tensor([1, -1]))


def test_inference_durations_at_least_one():
    d = durations_from_log(torch.tensor([[-5.0, 0.0, 1.0]]), torch.tensor([[True, True, False]]))
    assert d.tolist() == [[1, 1, 0]]
