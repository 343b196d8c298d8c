"""Grounding accuracy, Acc@kIoU, linear probing and facet breakdowns."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn

from .config import ProbeConfig
from .data import GroundingDataset, assemble_batch
from .fusion import MaskMode
from .model import GroundingModel, param_digest
from .projection import iou3d
from .synth import Box3D

log = logging.getLogger(__name__)

FACETS = ("distractor_count", "length_bucket", "spatial_keyword", "target_class")
DISTRACTOR_BUCKETS = (2, 3, 4, 5, 6)


def accuracy(predictions: Sequence[int], targets: Sequence[int]) -> float:
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions but {len(targets)} targets")
    if not len(predictions):
        return 0.0
    return float(np.mean(np.asarray(predictions) == np.asarray(targets)))


def acc_at_iou(pred_boxes: Sequence[Box3D], gt_boxes: Sequence[Box3D], k: float = 0.25) -> float:
    """Fraction of predictions whose IoU with the ground truth is strictly above ``k``."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError("pred_boxes and gt_boxes differ in length")
    if not pred_boxes:
        return 0.0
    return float(np.mean([iou3d(p, g) > k for p, g in zip(pred_boxes, gt_boxes)]))


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


# ---------------------------------------------------------------- breakdowns


def _class_names(dataset: GroundingDataset) -> list[str]:
    if dataset.manifests:
        return [c["name"] for c in dataset.manifests[0]["config"]["classes"]]
    return [str(i) for i in range(dataset.num_classes)]


def facet_value(dataset: GroundingDataset, query_index: int, facet: str) -> Any:
    q = dataset.queries[query_index]
    if facet == "distractor_count":
        # same-class objects in the scene, target included, bucketed as 2..6 (6 means 6 or more)
        return int(min(max(q.facets.distractor_count + 1, DISTRACTOR_BUCKETS[0]), DISTRACTOR_BUCKETS[-1]))
    if facet == "length_bucket":
        return q.facets.length_bucket
    if facet == "spatial_keyword":
        return q.facets.spatial_keyword
    if facet == "target_class":
        return _class_names(dataset)[q.target_class_id]
    raise ValueError(f"unknown facet {facet!r}; expected one of {FACETS}")


def breakdown(
    results: dict[str, Any], dataset: GroundingDataset, facets: Sequence[str] = FACETS
) -> dict[str, dict[Any, dict[str, float]]]:
    """Per facet value: prevalence ``fraction``, subset ``accuracy`` and ``count``.

    ``results`` holds parallel ``query_ids``, ``pred`` and ``target`` lists.
    """
    for f in facets:
        if f not in FACETS:
            raise ValueError(f"unknown facet {f!r}; expected one of {FACETS}")
    index = {q.query_id: i for i, q in enumerate(dataset.queries)}
    correct = np.equal(results["pred"], results["target"])
    n = len(correct)
    out: dict[str, dict[Any, dict[str, float]]] = {}
    for f in facets:
        groups: dict[Any, list[bool]] = {}
        for qid, ok in zip(results["query_ids"], correct):
            groups.setdefault(facet_value(dataset, index[qid], f), []).append(bool(ok))
        out[f] = {
            v: {"fraction": len(g) / n, "accuracy": float(np.mean(g)), "count": len(g)}
            for v, g in sorted(groups.items(), key=lambda kv: str(kv[0]))
        }
    return out


# ---------------------------------------------------------------- linear probe


@torch.no_grad()
def proposal_features(model: GroundingModel, dataset: GroundingDataset, indices: np.ndarray, batch_size: int = 64):
    """Fused proposal features F_O (inference mask) with their class labels, one row per (query, proposal)."""
    was = model.training
    model.eval()
    feats, labels = [], []
    for start in range(0, len(indices), batch_size):
        batch = assemble_batch(dataset, indices[start : start + batch_size], "non_sat", dtype=model.cfg.dtype)
        if batch is None:
            continue
        out = model(batch, MaskMode.INFERENCE)
        keep = ~batch.prop_pad & (batch.prop_cls >= 0)
        feats.append(out.fused.F_O[keep])
        labels.append(batch.prop_cls[keep])
    model.train(was)
    return torch.cat(feats), torch.cat(labels)


@dataclass
class ProbeResult:
    top1: float
    train_top1: float
    digest_before: str
    digest_after: str
    chance: float


def linear_probe(model: GroundingModel, dataset: GroundingDataset, cfg: ProbeConfig | None = None) -> ProbeResult:
    """Train a linear class head on frozen F_O features; returns val top-1.

    The grounding network is never handed to the optimizer, and its parameter
    digest is checked before returning.
    """
    cfg = cfg or ProbeConfig()
    before = param_digest(model)
    xtr, ytr = proposal_features(model, dataset, dataset.train_idx)
    xva, yva = proposal_features(model, dataset, dataset.val_idx)
    gen = torch.Generator().manual_seed(cfg.seed)
    head = nn.Linear(xtr.shape[1], model.cfg.num_classes).to(xtr.dtype)
    with torch.no_grad():
        w = torch.empty_like(head.weight)
        bound = 1.0 / np.sqrt(xtr.shape[1])
        head.weight.copy_(w.uniform_(-bound, bound, generator=gen))
        head.bias.copy_(torch.empty_like(head.bias).uniform_(-bound, bound, generator=gen))
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    n = len(xtr)
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            loss = nn.functional.cross_entropy(head(xtr[idx]), ytr[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    with torch.no_grad():
        top1 = float((head(xva).argmax(-1) == yva).double().mean())
        train_top1 = float((head(xtr).argmax(-1) == ytr).double().mean())
    after = param_digest(model)
    if before != after:
        raise AssertionError("linear probing modified the grounding network parameters")
    chance = float(np.bincount(yva.numpy(), minlength=model.cfg.num_classes).max() / len(yva))
    return ProbeResult(top1, train_top1, before, after, chance)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    overall_accuracy: float
    overall_std: float = 0.0
    acc_at_iou: dict[str, float] = field(default_factory=dict)
    breakdowns: dict[str, dict[Any, dict[str, float]]] = field(default_factory=dict)
    probe_top1: float | None = None
    n_samples: int = 0
    mode: str = ""
    checkpoint_hash: str = ""
    seeds: list[int] = field(default_factory=list)
    per_seed: list[float] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["breakdowns"] = {f: {str(k): v for k, v in vals.items()} for f, vals in self.breakdowns.items()}
        return d

    def csv_rows(self) -> list[dict[str, Any]]:
        rows = [{"facet": "overall", "value": "all", "fraction": 1.0, "accuracy": self.overall_accuracy,
                 "count": self.n_samples}]
        for k, v in sorted(self.acc_at_iou.items()):
            rows.append({"facet": "acc_at_iou", "value": k, "fraction": 1.0, "accuracy": v, "count": self.n_samples})
        for f, vals in self.breakdowns.items():
            for k, v in vals.items():
                rows.append({"facet": f, "value": k, **v})
        return rows

    def write(self, out_dir: str | Path, chart: bool = False) -> None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "eval_report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
            with (out / "eval_report.csv").open("w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=["facet", "value", "fraction", "accuracy", "count"])
                w.writeheader()
                w.writerows(self.csv_rows())
        except OSError as exc:
            raise OSError(f"cannot write evaluation report to {out}: {exc}") from exc
        if chart:
            self.plot(out)

    def plot(self, out_dir: Path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        for f, vals in self.breakdowns.items():
            fig, ax = plt.subplots(figsize=(6, 3))
            keys = [str(k) for k in vals]
            ax.bar(keys, [v["accuracy"] for v in vals.values()])
            ax.set_ylim(0, 1)
            ax.set_title(f)
            ax.set_ylabel("accuracy")
            fig.tight_layout()
            fig.savefig(out_dir / f"breakdown_{f}.png")
            plt.close(fig)


def evaluate(
    model: GroundingModel,
    dataset: GroundingDataset,
    mode: str,
    proposal_source: str = "ground_truth",
    checkpoint_bytes: bytes | None = None,
    facets: Sequence[str] = FACETS,
) -> EvalReport:
    """Evaluate on the val split with the mode's inference mask; never touches parameters."""
    from .training import predict_split

    res = predict_split(model, dataset, dataset.val_idx, mode, proposal_source)
    report = EvalReport(
        overall_accuracy=accuracy(res["pred"], res["target"]),
        breakdowns=breakdown(res, dataset, facets),
        n_samples=len(res["pred"]),
        mode=mode,
        checkpoint_hash=hashlib.sha256(checkpoint_bytes).hexdigest() if checkpoint_bytes else param_digest(model),
    )
    if proposal_source == "detector":
        report.acc_at_iou = {str(k): acc_at_iou(res["pred_boxes"], res["gt_boxes"], k) for k in (0.25, 0.5)}
    return report
