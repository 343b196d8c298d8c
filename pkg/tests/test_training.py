import json

import numpy as np
import pytest
import torch

from conftest import tiny_train_config
from satlab.config import ConfigError, LossConfig
from satlab.data import MODE_MASKS, FrameSampler, assemble_batch
from satlab.fusion import MaskMode
from satlab.training import (
    TrainingAborted,
    _check_finite,
    compute_losses,
    forward_mode,
    lr_schedule,
    main_path_loss,
    make_model,
    predict_split,
    train,
)


def test_lr_schedule_values():
    cfg = tiny_train_config(lr0=1e-4)
    assert lr_schedule(0, cfg) == 1e-4
    assert lr_schedule(9, cfg) == 1e-4
    assert lr_schedule(10, cfg) == pytest.approx(0.65e-4, rel=1e-15)
    assert lr_schedule(25, cfg) == pytest.approx(1e-4 * 0.65**2, rel=1e-15)
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_invalid_configs_rejected(small_ds):
    with pytest.raises(ConfigError):
        train(small_ds, tiny_train_config(mode="nope"))
    with pytest.raises(ConfigError):
        train(small_ds, tiny_train_config(epochs=0))
    with pytest.raises(ConfigError):
        train(small_ds, tiny_train_config(loss=LossConfig(alpha=0.0)))


def test_dataset_must_fit_model(small_ds):
    with pytest.raises(ValueError):
        make_model(tiny_train_config(model={"num_classes": 2}), small_ds)


@pytest.mark.parametrize("mode", ["sat", "mask_b"])
def test_main_path_gradient_wrt_semantics_is_exactly_zero(small_ds, mode):
    cfg = tiny_train_config(mode=mode)
    model = make_model(cfg, small_ds)
    batch = assemble_batch(small_ds, small_ds.train_idx[:8], mode, FrameSampler(0, 0))
    out = forward_mode(model, batch, mode, train=True)
    lb = compute_losses(out, batch, cfg.effective_loss())
    (g,) = torch.autograd.grad(main_path_loss(lb, cfg.loss), out.I_in, retain_graph=True, allow_unused=True)
    # None means I is not even in the main path's graph, the strongest form of zero
    assert g is None or torch.equal(g, torch.zeros_like(g))
    # the full objective does reach I through the auxiliary terms
    (g2,) = torch.autograd.grad(lb.total, out.I_in)
    assert g2.abs().sum() > 0


def test_mask_a_main_path_reaches_semantics(small_ds):
    cfg = tiny_train_config(mode="mask_a")
    model = make_model(cfg, small_ds)
    batch = assemble_batch(small_ds, small_ds.train_idx[:8], "mask_a", FrameSampler(0, 0))
    out = forward_mode(model, batch, "mask_a", train=True)
    lb = compute_losses(out, batch, cfg.effective_loss())
    (g,) = torch.autograd.grad(main_path_loss(lb, cfg.loss), out.I_in)
    assert g.abs().sum() > 0


def test_non_sat_has_no_semantics_losses(small_ds):
    cfg = tiny_train_config(mode="non_sat")
    model = make_model(cfg, small_ds)
    batch = assemble_batch(small_ds, small_ds.train_idx[:8], "non_sat")
    out = forward_mode(model, batch, "non_sat", train=True)
    lb = compute_losses(out, batch, cfg.effective_loss())
    assert out.I_in is None
    assert lb.l_vg_i.item() == 0 and lb.l_cor.item() == 0


def test_every_mode_evaluates_with_its_inference_mask():
    assert {m: MODE_MASKS[m][1] for m in MODE_MASKS} == {
        "sat": MaskMode.INFERENCE,
        "non_sat": MaskMode.INFERENCE,
        "mask_a": MaskMode.INFERENCE,
        "mask_b": MaskMode.INFERENCE,
        "input_aligned": MaskMode.INFERENCE,
        "input_unaligned": MaskMode.FULL,
    }


def test_train_writes_logs_and_checkpoints(small_ds, tmp_path):
    cfg = tiny_train_config(epochs=2)
    res = train(small_ds, cfg, tmp_path)
    assert (tmp_path / "final.ckpt").read_bytes() == res.final
    assert (tmp_path / "best.ckpt").read_bytes() == res.best
    recs = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    epochs = [r for r in recs if r["kind"] == "epoch"]
    steps = [r for r in recs if r["kind"] == "step"]
    assert len(epochs) == 2 and len(steps) == epochs[-1]["steps"]
    assert {"l_vg_o", "l_vg_i", "l_cor", "l_cls_q", "l_cls_o", "total", "lr"} <= set(steps[0])
    assert all(0 <= e["val_accuracy"] <= 1 for e in epochs)
    assert res.best_val == max(e["val_accuracy"] for e in epochs)
    assert res.final_val == epochs[-1]["val_accuracy"]


def test_training_reduces_loss(small_ds):
    res = train(small_ds, tiny_train_config(epochs=6, mode="non_sat"))
    losses = [e["train_loss"] for e in res.log.epochs]
    assert losses[-1] < losses[0]


def test_double_precision_training_is_reproducible(small_ds):
    cfg = tiny_train_config(epochs=1, model={"precision": "double"})
    assert train(small_ds, cfg).final == train(small_ds, cfg).final


def test_seed_changes_result(small_ds):
    a = train(small_ds, tiny_train_config(epochs=1, seed=0)).final
    b = train(small_ds, tiny_train_config(epochs=1, seed=1)).final
    assert a != b


def test_non_finite_loss_aborts_with_dump(small_ds):
    cfg = tiny_train_config()
    model = make_model(cfg, small_ds)
    batch = assemble_batch(small_ds, small_ds.train_idx[:4], "sat")
    lb = compute_losses(forward_mode(model, batch, "sat", train=True), batch, cfg.effective_loss())
    lb.total = lb.total * float("nan")
    with pytest.raises(TrainingAborted, match=batch.query_ids[0]):
        _check_finite(lb, batch, 0, 7)


def test_predict_split_shapes_and_ties(small_ds):
    cfg = tiny_train_config()
    model = make_model(cfg, small_ds)
    res = predict_split(model, small_ds, small_ds.val_idx, "sat")
    n = len(small_ds.val_idx)
    assert len(res["pred"]) == len(res["target"]) == len(res["query_ids"]) == n
    with torch.no_grad():
        for p in model.ground_3d.fc2.parameters():
            p.zero_()
    res = predict_split(model, small_ds, small_ds.val_idx, "sat")
    assert set(res["pred"]) == {0}


def test_train_and_eval_forward_equal_without_semantics(small_ds):
    # the SAT training graph and the inference graph give identical F_Q, F_O
    cfg = tiny_train_config(model={"precision": "double"})
    model = make_model(cfg, small_ds).eval()
    batch = assemble_batch(small_ds, small_ds.val_idx, "sat", dtype=torch.float64)
    with torch.no_grad():
        a = forward_mode(model, batch, "sat", train=True)
        b = forward_mode(model, batch, "sat", train=False)
    assert torch.equal(a.fused.F_Q, b.fused.F_Q) and torch.equal(a.fused.F_O, b.fused.F_O)
    assert torch.equal(a.S_O, b.S_O)


def test_detector_mode_logs_exclusions(tmp_path, small_data):
    from satlab.data import load_dataset

    ds = load_dataset(small_data, n_points=32, proposal_source="detector")
    res = train(ds, tiny_train_config(epochs=1, proposal_source="detector"))
    assert res.log.epochs[0]["cor_exclusions"] >= 1
    assert np.isfinite(res.log.epochs[0]["train_loss"])
