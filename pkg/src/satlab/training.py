"""Optimization loop, learning-rate schedule and per-mode loss assembly."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import encode
from .config import LossConfig, TrainConfig, config_hash, to_dict
from .data import MODE_MASKS, BatchStats, FrameSampler, GroundingDataset, assemble_batch
from .fusion import MaskMode, predict
from .losses import LossBreakdown, correspondence_terms, loss_cls, loss_vg, total_loss
from .model import Batch, GroundingModel, ModelOutput

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingAborted(RuntimeError):
    pass


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def compute_losses(out: ModelOutput, batch: Batch, cfg: LossConfig, negatives=None) -> LossBreakdown:
    """Batch-averaged loss components.

    L_VG^I is averaged over samples whose positive has a usable 2D record;
    L_cls^O is averaged over each sample's labelled proposals, then over samples.
    """
    zero = out.S_O.new_zeros(())
    parts = {"l_vg_o": loss_vg(out.S_O, batch.target).mean()}
    if out.S_I is not None and cfg.vg_i and bool(batch.vg_i_ok.any()):
        ok = batch.vg_i_ok
        parts["l_vg_i"] = loss_vg(out.S_I[ok], batch.target[ok]).mean()
    mined = []
    if out.fused.F_I is not None and cfg.cor:
        per_sample, negatives = correspondence_terms(out.fused.F_O, out.fused.F_I, batch.cor_eligible, cfg.alpha, negatives)
        parts["l_cor"] = per_sample.mean()
        mined = negatives
    if cfg.cls:
        parts["l_cls_q"] = loss_cls(out.logits_q, batch.target_cls)
        b, m, c = out.logits_o.shape
        ce = F.cross_entropy(out.logits_o.reshape(b * m, c), batch.prop_cls.reshape(-1), ignore_index=-100, reduction="none")
        ce = ce.reshape(b, m)
        valid = batch.prop_cls != -100
        n = valid.sum(dim=1)
        has = n > 0
        parts["l_cls_o"] = (ce.sum(dim=1)[has] / n[has]).mean() if bool(has.any()) else zero
    return total_loss(parts, cfg, mined)


def main_path_loss(lb: LossBreakdown, cfg: LossConfig) -> torch.Tensor:
    """Terms computed only from F_Q / F_O; masking makes these independent of I."""
    return lb.l_vg_o + cfg.w_cls * (lb.l_cls_q + lb.l_cls_o)


@dataclass
class TrainLog:
    seed: int
    config_hash: str
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def val_accuracy(self) -> list[float]:
        return [e["val_accuracy"] for e in self.epochs]


@dataclass
class TrainResult:
    model: GroundingModel
    log: TrainLog
    final: bytes
    best: bytes
    best_epoch: int
    best_val: float
    final_val: float


def make_model(cfg: TrainConfig, dataset: GroundingDataset | None = None) -> GroundingModel:
    torch.manual_seed(cfg.seed)
    mc = cfg.model
    if dataset is not None:
        if dataset.num_classes > mc.num_classes or len(dataset.vocabulary) > mc.vocab_size or dataset.k_max > mc.k_max:
            raise ValueError(
                f"dataset (classes={dataset.num_classes}, vocab={len(dataset.vocabulary)}, k_max={dataset.k_max}) "
                f"does not fit the model config"
            )
    return GroundingModel(mc, cfg.semantics).to(mc.dtype)


def forward_mode(model: GroundingModel, batch: Batch, mode: str, train: bool, keep_weights: bool = False) -> ModelOutput:
    train_mask, eval_mask, aligned = MODE_MASKS[mode]
    return model(batch, train_mask if train else eval_mask, aligned=aligned, keep_weights=keep_weights)


@torch.no_grad()
def predict_split(
    model: GroundingModel,
    dataset: GroundingDataset,
    indices: np.ndarray,
    mode: str,
    proposal_source: str = "ground_truth",
    batch_size: int = 64,
    mask_override: MaskMode | None = None,
    zero_semantics: bool = False,
):
    """Predicted and positive proposal indices for a split, plus the query ids and boxes."""
    was = model.training
    model.eval()
    preds, targets, qids, pboxes, gboxes = [], [], [], [], []
    dtype = model.cfg.dtype
    for start in range(0, len(indices), batch_size):
        batch = assemble_batch(dataset, indices[start : start + batch_size], mode, None, proposal_source, dtype)
        if batch is None:
            continue
        if zero_semantics:
            for name in ("x_roi", "x_cls", "x_geo"):
                getattr(batch, name).zero_()
        if mask_override is None:
            out = forward_mode(model, batch, mode, train=False)
        else:
            out = model(batch, mask_override, aligned=MODE_MASKS[mode][2])
        p = predict(out.S_O)
        preds += p.tolist()
        targets += batch.target.tolist()
        qids += batch.query_ids
        pboxes += [bx[int(k)] for bx, k in zip(batch.boxes, p)]
        gboxes += batch.gt_boxes
    model.train(was)
    return {"pred": preds, "target": targets, "query_ids": qids, "pred_boxes": pboxes, "gt_boxes": gboxes}


def _check_finite(lb: LossBreakdown, batch: Batch, epoch: int, step: int) -> None:
    if not math.isfinite(lb.total.item()):
        dump = {"epoch": epoch, "step": step, "query_ids": batch.query_ids, "losses": lb.as_dict()}
        raise TrainingAborted(f"non-finite loss at step {step} (epoch {epoch}); batch dump: {json.dumps(dump)}")


def _assert_masked(out: ModelOutput, lb: LossBreakdown, cfg: LossConfig, step: int) -> None:
    if out.I_in is None or not out.I_in.requires_grad:
        return
    (g,) = torch.autograd.grad(main_path_loss(lb, cfg), out.I_in, retain_graph=True, allow_unused=True)
    if g is not None and bool(g.ne(0).any()):
        raise TrainingAborted(f"step {step}: 2D semantics leaked into the main grounding path (nonzero gradient)")


def train(
    dataset: GroundingDataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Train one model; writes best.ckpt, final.ckpt and train_log.jsonl when ``out_dir`` is given."""
    cfg.validate()
    if len(dataset.train_idx) == 0 or len(dataset.val_idx) == 0:
        raise ValueError("dataset needs non-empty train and val splits")
    t0 = time.perf_counter()
    model = make_model(cfg, dataset)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=ADAM_BETAS, eps=ADAM_EPS)
    loss_cfg = cfg.effective_loss()
    chash = config_hash(cfg)
    tlog = TrainLog(seed=cfg.seed, config_hash=chash)
    meta = {"config_hash": chash, "mode": cfg.mode, "seed": cfg.seed, "semantics": to_dict(cfg.semantics),
            "vocabulary": dataset.vocabulary}
    dtype = cfg.model.dtype
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "train_log.jsonl").open("w", encoding="utf-8")
    best, best_val, best_epoch, val_acc = b"", -1.0, -1, 0.0
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(dataset.train_idx)
            sampler = FrameSampler(cfg.seed, epoch)
            stats = BatchStats()
            totals = []
            for start in range(0, len(order), cfg.batch_size):
                batch = assemble_batch(
                    dataset, order[start : start + cfg.batch_size], cfg.mode, sampler, cfg.proposal_source, dtype, stats
                )
                if batch is None:
                    continue
                out = forward_mode(model, batch, cfg.mode, train=True)
                lb = compute_losses(out, batch, loss_cfg)
                _check_finite(lb, batch, epoch, step)
                logged = step % cfg.log_every == 0
                if logged and MODE_MASKS[cfg.mode][0] in (MaskMode.SAT, MaskMode.MASK_B):
                    _assert_masked(out, lb, loss_cfg, step)
                opt.zero_grad(set_to_none=True)
                lb.total.backward()
                opt.step()
                totals.append(lb.total.item())
                if logged:
                    rec = {"step": step, "epoch": epoch, "lr": opt.param_groups[0]["lr"], **lb.as_dict()}
                    tlog.steps.append(rec)
                    if log_file:
                        log_file.write(json.dumps({"kind": "step", **rec}) + "\n")
                step += 1
            res = predict_split(model, dataset, dataset.val_idx, cfg.mode, cfg.proposal_source)
            val_acc = float(np.mean(np.equal(res["pred"], res["target"]))) if res["pred"] else 0.0
            erec = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(totals)) if totals else float("nan"),
                "val_accuracy": val_acc,
                "skipped": len(stats.skipped),
                "missing_semantics": len(stats.missing_semantics),
                "cor_exclusions": stats.cor_exclusions,
                "steps": step,
            }
            tlog.epochs.append(erec)
            if log_file:
                log_file.write(json.dumps({"kind": "epoch", **erec}) + "\n")
                log_file.flush()
            log.info("epoch %d lr %.3g loss %.4f val %.4f", epoch, lr, erec["train_loss"], val_acc)
            if val_acc > best_val:
                best_val, best_epoch = val_acc, epoch
                best = encode(model.state_dict(), cfg.model, {**meta, "epoch": epoch})
            if epoch_callback is not None:
                epoch_callback(epoch, model, erec)
    finally:
        if log_file:
            log_file.close()
    final = encode(model.state_dict(), cfg.model, {**meta, "epoch": cfg.epochs - 1})
    tlog.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        (out_dir / "final.ckpt").write_bytes(final)
        (out_dir / "best.ckpt").write_bytes(best)
    return TrainResult(model, tlog, final, best, best_epoch, best_val, val_acc)

