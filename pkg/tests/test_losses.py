import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from satlab.config import LossConfig
from satlab.losses import (
    correspondence_terms,
    loss_cls,
    loss_correspondence,
    loss_vg,
    mine_hard_negatives,
    similarity,
    total_loss,
)

f64 = torch.float64


def oracle_vg(scores, pos):
    s = np.asarray(scores, dtype=float)
    return float(np.log(np.exp(s - s.max()).sum()) + s.max() - s[pos])


def test_vg_examples():
    assert loss_vg(torch.zeros(4, dtype=f64), 2).item() == pytest.approx(math.log(4), abs=1e-12)
    s = torch.tensor([2.0, 1.0, 0.0], dtype=f64)
    assert loss_vg(s, 0).item() == pytest.approx(math.log(1 + math.exp(-1) + math.exp(-2)), abs=1e-12)
    assert loss_vg(torch.tensor([50.0, 0.0], dtype=f64), 0).item() < 1e-20


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8), st.data())
def test_vg_matches_oracle_and_nonnegative(scores, data):
    pos = data.draw(st.integers(0, len(scores) - 1))
    v = loss_vg(torch.tensor(scores, dtype=f64), pos).item()
    assert v >= 0
    assert v == pytest.approx(oracle_vg(scores, pos), rel=1e-10, abs=1e-10)


def test_vg_batched_and_errors():
    s = torch.randn(3, 5, dtype=f64)
    pos = torch.tensor([0, 4, 2])
    out = loss_vg(s, pos)
    for b in range(3):
        assert out[b].item() == pytest.approx(oracle_vg(s[b].numpy(), int(pos[b])), rel=1e-12)
    with pytest.raises(ValueError):
        loss_vg(torch.zeros(3), 3)
    with pytest.raises(ValueError):
        loss_vg(torch.zeros(3), -1)


def test_vg_gradient_is_softmax_minus_onehot():
    s = torch.randn(6, dtype=f64, requires_grad=True)
    loss_vg(s, 3).backward()
    expect = torch.softmax(s.detach(), 0)
    expect[3] -= 1
    torch.testing.assert_close(s.grad, expect, rtol=1e-12, atol=1e-12)


def test_cls_examples():
    assert loss_cls(torch.zeros(7, dtype=f64), 3).item() == pytest.approx(math.log(7), abs=1e-12)
    logits = torch.tensor([[1.0, 2.0, 3.0], [0.0, 0.0, 5.0]], dtype=f64)
    ref = np.mean([oracle_vg(logits[0].numpy(), 2), oracle_vg(logits[1].numpy(), 0)])
    assert loss_cls(logits, torch.tensor([2, 0])).item() == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        loss_cls(torch.zeros(3), 5)


# ---------------------------------------------------------------- correspondence


def oracle_cor(FO, FI, eligible, alpha):
    FO = FO / np.maximum(np.linalg.norm(FO, axis=1, keepdims=True), 1e-12)
    FI = FI / np.maximum(np.linalg.norm(FI, axis=1, keepdims=True), 1e-12)
    s = FO @ FI.T
    idx = [m for m in range(len(FO)) if eligible[m]]
    if len(idx) < 2:
        return 0.0
    total = 0.0
    for m in idx:
        i = max((k for k in idx if k != m), key=lambda k: (s[m, k], -k))
        j = max((k for k in idx if k != m), key=lambda k: (s[k, m], -k))
        total += max(0.0, alpha - s[m, m] + s[m, i]) + max(0.0, alpha - s[m, m] + s[j, m])
    return total


def test_cor_zero_for_aligned_orthonormal():
    F = torch.eye(4, dtype=f64)
    assert loss_correspondence(F, F).item() == 0.0


def test_cor_swapped_pairs_penalized():
    F = torch.eye(3, dtype=f64)
    # positive similarity 0, hardest negative 1 -> each hinge = 0.1 + 1
    v = loss_correspondence(F, F[[1, 2, 0]]).item()
    assert v == pytest.approx(3 * 2 * 1.1, abs=1e-12)


def test_cor_needs_two_eligible():
    F = torch.randn(4, 5, dtype=f64)
    G = torch.randn(4, 5, dtype=f64)
    assert loss_correspondence(F, G, torch.tensor([False, True, False, False])).item() == 0.0
    assert loss_correspondence(F[:1], G[:1]).item() == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_cor_matches_oracle(m, seed):
    rng = np.random.default_rng(seed)
    FO, FI = rng.normal(size=(m, 5)), rng.normal(size=(m, 5))
    elig = rng.random(m) < 0.7
    v = loss_correspondence(torch.tensor(FO), torch.tensor(FI), torch.tensor(elig)).item()
    assert v >= 0
    assert v == pytest.approx(oracle_cor(FO, FI, elig, 0.1), rel=1e-10, abs=1e-12)


def test_cor_batched_mean_of_sums():
    FO, FI = torch.randn(3, 4, 6, dtype=f64), torch.randn(3, 4, 6, dtype=f64)
    el = torch.ones(3, 4, dtype=torch.bool)
    per = [loss_correspondence(FO[b], FI[b]).item() for b in range(3)]
    assert loss_correspondence(FO, FI, el).item() == pytest.approx(np.mean(per), rel=1e-12)


def test_similarity_scale_invariant():
    F, G = torch.randn(3, 4, dtype=f64), torch.randn(3, 4, dtype=f64)
    torch.testing.assert_close(similarity(F, G), similarity(3 * F, 0.5 * G), rtol=1e-12, atol=1e-12)


def test_hard_negatives_bruteforce_and_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        FO, FI = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        trip = mine_hard_negatives(torch.tensor(FO), torch.tensor(FI))
        s = similarity(torch.tensor(FO), torch.tensor(FI)).numpy()
        for m, i, j in trip:
            others = [k for k in range(5) if k != m]
            assert i == max(others, key=lambda k: (s[m, k], -k))
            assert j == max(others, key=lambda k: (s[k, m], -k))
    # all-equal similarity: lowest non-anchor index wins
    ones = torch.ones(3, 2, dtype=f64)
    assert mine_hard_negatives(ones, ones) == [(0, 1, 1), (1, 0, 0), (2, 0, 0)]
    assert mine_hard_negatives(ones[:1], ones[:1]) == []


def test_mining_is_not_differentiated():
    FO = torch.randn(1, 4, 3, dtype=f64, requires_grad=True)
    FI = torch.randn(1, 4, 3, dtype=f64)
    el = torch.ones(1, 4, dtype=torch.bool)
    per, negs = correspondence_terms(FO, FI, el, 0.1)
    assert not negs[0].requires_grad
    # pinning the mined negatives gives the same value
    per2, _ = correspondence_terms(FO, FI, el, 0.1, negatives=negs)
    assert torch.equal(per, per2)


# ---------------------------------------------------------------- total


def parts(requires_grad=False):
    g = torch.Generator().manual_seed(0)
    return {k: (torch.rand((), generator=g, dtype=f64) + 0.1).requires_grad_(requires_grad)
            for k in ("l_vg_o", "l_vg_i", "l_cor", "l_cls_q", "l_cls_o")}


def test_total_weighted_sum():
    p = parts()
    lb = total_loss(p, LossConfig())
    ref = p["l_vg_o"] + p["l_vg_i"] + 10 * p["l_cor"] + 0.5 * (p["l_cls_o"] + p["l_cls_q"])
    assert lb.total.item() == pytest.approx(ref.item(), rel=1e-15)
    assert set(lb.as_dict()) == {"l_vg_o", "l_vg_i", "l_cor", "l_cls_q", "l_cls_o", "total"}


def test_disabled_components_are_zero_with_zero_gradient():
    p = parts(requires_grad=True)
    lb = total_loss(p, LossConfig(vg_i=False, cor=False, cls=False))
    assert lb.l_vg_i.item() == 0 and lb.l_cor.item() == 0 and lb.l_cls_o.item() == 0
    lb.total.backward()
    assert p["l_vg_o"].grad.item() == 1.0
    for k in ("l_vg_i", "l_cor", "l_cls_q", "l_cls_o"):
        assert p[k].grad is None


def test_total_gradient_weights():
    p = parts(requires_grad=True)
    total_loss(p, LossConfig()).total.backward()
    assert [p[k].grad.item() for k in ("l_vg_o", "l_vg_i", "l_cor", "l_cls_q", "l_cls_o")] == [1, 1, 10, 0.5, 0.5]
