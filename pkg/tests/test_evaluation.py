import csv
import json

import numpy as np
import pytest
import torch

from conftest import tiny_train_config
from satlab.evaluation import (
    FACETS,
    EvalReport,
    acc_at_iou,
    accuracy,
    breakdown,
    evaluate,
    facet_value,
    linear_probe,
    mean_std,
)
from satlab.config import ProbeConfig
from satlab.model import param_digest
from satlab.synth import Box3D
from satlab.training import make_model, predict_split


def test_accuracy_examples():
    assert accuracy([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5
    assert accuracy([], []) == 0.0
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


def test_acc_at_iou_strict_threshold():
    g = Box3D(np.zeros(3), np.ones(3))
    half = Box3D(np.array([0.5, 0, 0]), np.ones(3))  # IoU exactly 1/3
    far = Box3D(np.array([9.0, 0, 0]), np.ones(3))
    assert acc_at_iou([g, half, far], [g, g, g], 0.25) == pytest.approx(2 / 3)
    assert acc_at_iou([g, half, far], [g, g, g], 0.5) == pytest.approx(1 / 3)
    assert acc_at_iou([half], [g], 1 / 3) == 0.0
    with pytest.raises(ValueError):
        acc_at_iou([g], [])


def test_acc_at_iou_monotone_in_threshold():
    rng = np.random.default_rng(0)
    pred = [Box3D(rng.uniform(0, 1, 3), rng.uniform(0.5, 1.5, 3)) for _ in range(50)]
    gt = [Box3D(rng.uniform(0, 1, 3), rng.uniform(0.5, 1.5, 3)) for _ in range(50)]
    assert acc_at_iou(pred, gt, 0.25) >= acc_at_iou(pred, gt, 0.5)


def test_mean_std_population():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
    assert mean_std([5.0]) == (5.0, 0.0)


def test_breakdown_fractions_and_subset_accuracy(small_ds):
    idx = small_ds.val_idx
    res = {"query_ids": [small_ds.queries[i].query_id for i in idx],
           "target": [0] * len(idx), "pred": [i % 2 for i in range(len(idx))]}
    out = breakdown(res, small_ds)
    assert set(out) == set(FACETS)
    for f, vals in out.items():
        assert sum(v["fraction"] for v in vals.values()) == pytest.approx(1.0)
        assert sum(v["count"] for v in vals.values()) == len(idx)
        # the count-weighted subset accuracies recover the overall accuracy
        assert sum(v["accuracy"] * v["count"] for v in vals.values()) / len(idx) == pytest.approx(
            accuracy(res["pred"], res["target"]))
    for v in out["distractor_count"]:
        assert 2 <= v <= 6
    with pytest.raises(ValueError):
        breakdown(res, small_ds, ["colour"])
    with pytest.raises(ValueError):
        facet_value(small_ds, 0, "colour")


def test_evaluate_leaves_parameters_untouched(small_ds, tmp_path):
    cfg = tiny_train_config()
    model = make_model(cfg, small_ds)
    before = param_digest(model)
    rep = evaluate(model, small_ds, "sat")
    assert param_digest(model) == before
    ref = predict_split(model, small_ds, small_ds.val_idx, "sat")
    assert rep.overall_accuracy == accuracy(ref["pred"], ref["target"])
    assert rep.n_samples == len(small_ds.val_idx)
    assert rep.checkpoint_hash == before
    rep.write(tmp_path, chart=True)
    js = json.loads((tmp_path / "eval_report.json").read_text())
    assert js["overall_accuracy"] == rep.overall_accuracy
    rows = list(csv.DictReader((tmp_path / "eval_report.csv").open()))
    assert rows[0]["facet"] == "overall"
    assert list(tmp_path.glob("breakdown_*.png"))


def test_report_write_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        EvalReport(0.5).write(blocker / "sub")


def test_linear_probe_freezes_backbone_and_is_seeded(small_ds):
    model = make_model(tiny_train_config(), small_ds)
    cfg = ProbeConfig(epochs=5)
    a = linear_probe(model, small_ds, cfg)
    b = linear_probe(model, small_ds, cfg)
    assert a.digest_before == a.digest_after == param_digest(model)
    assert a.top1 == b.top1
    assert 0 <= a.top1 <= 1 and 0 < a.chance <= 1
    assert all(p.grad is None for p in model.parameters())


def test_linear_probe_separable_features_reach_full_accuracy(small_ds, monkeypatch):
    # features that are a one-hot of the class make the probe trivially perfect
    import satlab.evaluation as ev

    def fake(model, ds, idx, batch_size=64):
        y = torch.tensor([i % 4 for i in range(4 * len(idx))])
        x = torch.nn.functional.one_hot(y, model.cfg.d).float() * 5
        return x, y

    monkeypatch.setattr(ev, "proposal_features", fake)
    res = linear_probe(make_model(tiny_train_config(), small_ds), small_ds, ProbeConfig(epochs=200, lr=1e-2))
    assert res.top1 == 1.0
