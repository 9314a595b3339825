"""Loss-formula oracles: every expected value below is computed with plain
scalar arithmetic (math.log / math.exp) independently of the implementation."""

import math

import numpy as np
import pytest
import torch
from torch import nn

from vidlang.errors import ConfigError
from vidlang.pretraining import (masked_token_loss, mfm_loss, mlm_loss,
                                 mvm_loss, vtm_loss)


def _identity_head(dim):
    head = nn.Linear(dim, dim).double()
    with torch.no_grad():
        head.weight.copy_(torch.eye(dim))
        head.bias.zero_()
    return head


def _ce(logits, target):
    lse = math.log(sum(math.exp(v) for v in logits))
    return lse - logits[target]


def test_masked_token_loss_uniform_logits():
    vocab = 512
    logits = torch.zeros(1, 3, vocab, dtype=torch.float64)
    targets = torch.tensor([[5, 9, 40]])
    mask = torch.tensor([[True, True, False]])
    loss = masked_token_loss(logits, targets, mask)
    assert math.isclose(float(loss.detach()), math.log(vocab), rel_tol=1e-6)


def test_masked_token_loss_hand_case():
    # Two masked tokens, vocabulary of 4; oracle is per-token cross-entropy
    # computed by hand and averaged.
    logits = torch.tensor([[[0.3, -1.2, 0.7, 0.1],
                            [2.0, 0.0, -0.5, 1.0],
                            [0.0, 0.0, 0.0, 0.0]]], dtype=torch.float64)
    targets = torch.tensor([[2, 0, 3]])
    mask = torch.tensor([[True, True, False]])
    expected = (_ce([0.3, -1.2, 0.7, 0.1], 2) + _ce([2.0, 0.0, -0.5, 1.0], 0)) / 2
    loss = masked_token_loss(logits, targets, mask)
    assert math.isclose(float(loss.detach()), expected, rel_tol=1e-9)


def test_masked_token_loss_empty_mask_contributes_zero():
    logits = torch.rand(2, 3, 5, dtype=torch.float64)
    targets = torch.zeros(2, 3, dtype=torch.int64)
    mask = torch.zeros(2, 3, dtype=torch.bool)
    mask[0, 1] = True
    only_first = masked_token_loss(logits[:1], targets[:1], mask[:1])
    both = masked_token_loss(logits, targets, mask)
    assert math.isclose(float(both.detach()), float(only_first.detach()) / 2, rel_tol=1e-9)


def test_mlm_loss_perfect_prediction_zero():
    vocab = 6
    head = _identity_head(vocab)
    features = torch.zeros(1, 2, vocab, dtype=torch.float64)
    features[0, 0, 3] = 60.0
    features[0, 1, 1] = 60.0
    targets = torch.tensor([[3, 1]])
    mask = torch.ones(1, 2, dtype=torch.bool)
    loss = mlm_loss(features, mask, targets, head)
    assert float(loss.detach()) < 1e-6


def test_mlm_loss_empty_mask_zero():
    head = _identity_head(4)
    features = torch.rand(1, 3, 4, dtype=torch.float64)
    loss = mlm_loss(features, torch.zeros(1, 3, dtype=torch.bool),
                    torch.zeros(1, 3, dtype=torch.int64), head)
    assert float(loss.detach()) == 0.0


def test_vtm_loss_half_probability():
    zero = torch.zeros(3, dtype=torch.float64)
    loss = vtm_loss(zero, zero)
    assert math.isclose(float(loss.detach()), 2 * math.log(2), rel_tol=1e-9)


def test_vtm_loss_hand_case():
    pos = torch.tensor([1.0], dtype=torch.float64)
    neg = torch.tensor([-0.5], dtype=torch.float64)
    b_pos = 1 / (1 + math.exp(-1.0))
    b_neg = 1 / (1 + math.exp(0.5))
    expected = -(math.log(b_pos) + math.log(1 - b_neg))
    assert math.isclose(float(vtm_loss(pos, neg)), expected, rel_tol=1e-9)


def test_vtm_loss_optimum_approaches_zero():
    pos = torch.tensor([30.0], dtype=torch.float64)
    neg = torch.tensor([-30.0], dtype=torch.float64)
    assert float(vtm_loss(pos, neg)) < 1e-9


def test_vtm_loss_swapped_labels_increase_loss():
    pos = torch.tensor([2.0], dtype=torch.float64)
    neg = torch.tensor([-2.0], dtype=torch.float64)
    assert float(vtm_loss(neg, pos)) > float(vtm_loss(pos, neg))


def test_mvm_loss_uniform_logits():
    k = 256
    head = _identity_head(k)
    features = torch.zeros(1, 2, 4, k, dtype=torch.float64)
    grid = torch.zeros(1, 2, 4, dtype=torch.int64)
    mask = torch.zeros(1, 2, 4, dtype=torch.bool)
    mask[0, 0, 1] = True  # one frame masked -> per-frame mean = ln K, sum = ln K
    loss, _ = mvm_loss(features, mask, grid, head)
    assert math.isclose(float(loss.detach()), math.log(k), rel_tol=1e-6)
    mask[0, 1, 2] = True  # two frames masked -> 2 ln K
    loss2, _ = mvm_loss(features, mask, grid, head)
    assert math.isclose(float(loss2.detach()), 2 * math.log(k), rel_tol=1e-6)


def test_mvm_loss_hand_case():
    # Two frames, two masked patches in frame 0 and one in frame 1.
    k = 3
    head = _identity_head(k)
    features = torch.tensor([[
        [[0.5, -0.2, 0.1], [1.0, 0.0, -1.0], [0.0, 0.0, 0.0]],
        [[0.3, 0.3, 0.3], [-0.7, 0.2, 0.9], [0.0, 0.0, 0.0]],
    ]], dtype=torch.float64)
    grid = torch.tensor([[[1, 2, 0], [0, 2, 0]]])
    mask = torch.tensor([[[True, True, False], [False, True, False]]])
    expected = (
        (_ce([0.5, -0.2, 0.1], 1) + _ce([1.0, 0.0, -1.0], 2)) / 2
        + _ce([-0.7, 0.2, 0.9], 2)
    )
    loss, _ = mvm_loss(features, mask, grid, head)
    assert math.isclose(float(loss.detach()), expected, rel_tol=1e-9)


def test_mvm_loss_perfect_prediction():
    k = 4
    head = _identity_head(k)
    features = torch.zeros(1, 1, 2, k, dtype=torch.float64)
    features[0, 0, 0, 2] = 60.0
    features[0, 0, 1, 1] = 60.0
    grid = torch.tensor([[[2, 1]]])
    mask = torch.ones(1, 1, 2, dtype=torch.bool)
    loss, acc = mvm_loss(features, mask, grid, head)
    assert float(loss.detach()) < 1e-6
    assert acc == 1.0


def test_mvm_loss_accuracy_counts_masked_only():
    k = 4
    head = _identity_head(k)
    features = torch.zeros(1, 1, 2, k, dtype=torch.float64)
    features[0, 0, 0, 2] = 10.0  # correct for patch 0
    features[0, 0, 1, 0] = 10.0  # wrong for patch 1
    grid = torch.tensor([[[2, 1]]])
    mask = torch.tensor([[[True, True]]])
    _, acc = mvm_loss(features, mask, grid, head)
    assert acc == 0.5
    _, acc_partial = mvm_loss(features, torch.tensor([[[True, False]]]), grid, head)
    assert acc_partial == 1.0


def test_mvm_loss_shape_mismatch():
    head = _identity_head(4)
    with pytest.raises(ConfigError):
        mvm_loss(torch.zeros(1, 2, 3, 4, dtype=torch.float64),
                 torch.zeros(1, 2, 2, dtype=torch.bool),
                 torch.zeros(1, 2, 2, dtype=torch.int64), head)


def test_mfm_loss_hand_case():
    dim = 2
    head = _identity_head(dim)
    features = torch.tensor([[[[1.0, 0.0], [0.0, 0.0]]]], dtype=torch.float64)
    target = torch.tensor([[[[1.2, 3.0], [9.0, 9.0]]]], dtype=torch.float64)
    mask = torch.tensor([[[True, False]]])
    # Smooth-L1 per element: 0.5*d^2 for |d|<1 else |d|-0.5; averaged.
    expected = (0.5 * 0.2**2 + (3.0 - 0.5)) / 2
    loss = mfm_loss(features, mask, target, head)
    assert math.isclose(float(loss.detach()), expected, rel_tol=1e-6)


def test_mfm_loss_empty_mask_zero():
    head = _identity_head(2)
    loss = mfm_loss(torch.rand(1, 1, 2, 2, dtype=torch.float64),
                    torch.zeros(1, 1, 2, dtype=torch.bool),
                    torch.rand(1, 1, 2, 2, dtype=torch.float64), head)
    assert float(loss.detach()) == 0.0
