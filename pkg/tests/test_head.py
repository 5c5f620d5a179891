import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ssl_langid.head import HeadConfig, XVectorHead, cross_entropy, stats_pool
from oracles import gradient_errors, module_gradient_errors


def test_stats_pool_hand_example():
    out = stats_pool(torch.tensor([[1.0, 3.0], [3.0, 5.0]]))
    torch.testing.assert_close(out, torch.tensor([2.0, 4.0, 1.0, 1.0]))


def test_stats_pool_constant_and_single_frame():
    out = stats_pool(torch.full((7, 3), 2.5, dtype=torch.float64))
    torch.testing.assert_close(out[3:], torch.full((3,), 1e-10, dtype=torch.float64))
    row = torch.tensor([[0.5, -1.0]], dtype=torch.float64)
    out = stats_pool(row)
    torch.testing.assert_close(out, torch.tensor([0.5, -1.0, 1e-10, 1e-10], dtype=torch.float64))


def test_stats_pool_empty():
    with pytest.raises(ValueError):
        stats_pool(torch.zeros(0, 4))


def test_stats_pool_time_permutation_invariant():
    e = torch.randn(2, 11, 5, dtype=torch.float64)
    perm = torch.randperm(11)
    torch.testing.assert_close(stats_pool(e[:, perm]), stats_pool(e))


def test_stats_pool_gradient():
    e = torch.randn(9, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(8, dtype=torch.float64)
    errors = gradient_errors(lambda: (stats_pool(e) * w).sum(), {"e": e})
    assert errors["e"] < 1e-4


def test_zero_weights_give_zero_logits():
    head = XVectorHead(4, HeadConfig(n_classes=3, bottleneck_dim=5))
    for p in head.parameters():
        torch.nn.init.zeros_(p)
    assert torch.equal(head.logits(torch.randn(8)), torch.zeros(3))


def test_logits_hand_example():
    head = XVectorHead(1, HeadConfig(n_classes=2, bottleneck_dim=2))
    with torch.no_grad():
        head.bottleneck.weight.copy_(torch.tensor([[1.0, 2.0], [-1.0, 1.0]]))
        head.bottleneck.bias.copy_(torch.tensor([0.5, -3.0]))
        head.classifier.weight.copy_(torch.tensor([[1.0, 0.0], [2.0, -1.0]]))
        head.classifier.bias.copy_(torch.tensor([0.0, 1.0]))
    p = torch.tensor([1.0, 1.0])
    # bottleneck: [1+2+0.5, -1+1-3] = [3.5, -3] -> relu [3.5, 0] -> [3.5, 8.0]
    torch.testing.assert_close(head.logits(p), torch.tensor([3.5, 8.0]))
    head.cfg.nonlinearity = False
    # [3.5, -3] -> [3.5, 7 + 3 + 1]
    torch.testing.assert_close(head.logits(p), torch.tensor([3.5, 11.0]))


def test_logits_dim_mismatch():
    with pytest.raises(ValueError):
        XVectorHead(4, HeadConfig(n_classes=2)).logits(torch.randn(7))


def test_head_config_validation():
    with pytest.raises(ValueError):
        HeadConfig(n_classes=1)
    with pytest.raises(ValueError):
        HeadConfig(n_classes=2, bottleneck_dim=0)


@pytest.mark.parametrize("k", [2, 5, 107])
def test_cross_entropy_uniform(k):
    assert math.isclose(cross_entropy(torch.zeros(k), 0).item(), math.log(k), abs_tol=1e-6)


def test_cross_entropy_saturated():
    logits = torch.zeros(4, dtype=torch.float64)
    logits[2] = 1000.0
    assert cross_entropy(logits, 2).item() < 1e-6


def test_cross_entropy_two_class():
    loss = cross_entropy(torch.tensor([1.0, 2.0], dtype=torch.float64), 1).item()
    assert math.isclose(loss, math.log(1 + math.exp(-1)), abs_tol=1e-12)
    assert math.isclose(loss, 0.3133, abs_tol=1e-4)


def test_cross_entropy_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(torch.zeros(3), 3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.data())
def test_cross_entropy_non_negative_and_softmax_gradient(values, data):
    target = data.draw(st.integers(0, len(values) - 1))
    logits = torch.tensor(values, dtype=torch.float64, requires_grad=True)
    loss = cross_entropy(logits, target)
    assert loss.item() >= 0
    loss.backward()
    onehot = torch.zeros_like(logits)
    onehot[target] = 1
    torch.testing.assert_close(logits.grad, torch.softmax(logits.detach(), 0) - onehot)


def test_softmax_gradient_matches_finite_differences():
    logits = torch.randn(6, dtype=torch.float64, requires_grad=True)
    errors = gradient_errors(lambda: cross_entropy(logits, 4), {"logits": logits})
    assert errors["logits"] < 1e-4


def test_full_head_gradient():
    torch.manual_seed(0)
    head = XVectorHead(6, HeadConfig(n_classes=3, bottleneck_dim=5))
    e = torch.randn(2, 10, 6, dtype=torch.float64, requires_grad=True)
    target = torch.tensor([2, 0])
    errors = module_gradient_errors(head, lambda: cross_entropy(head(e), target), [e])
    assert max(errors.values()) < 1e-4, errors
