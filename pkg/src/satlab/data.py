"""In-memory grounding datasets and batch assembly for every training mode."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import DetectorNoiseConfig, TrainConfig
from .embeddings import normalize_segment, resample_segment
from .fusion import MaskMode
from .model import Batch
from .projection import ProposalMatch, Semantics2D, match_proposals, perturb_proposals
from .synth import Box3D, QueryRecord, SceneRecord, read_jsonl

log = logging.getLogger(__name__)

# mode -> (training mask, inference mask, 2D concatenated onto proposals)
MODE_MASKS = {
    "sat": (MaskMode.SAT, MaskMode.INFERENCE, False),
    "non_sat": (MaskMode.INFERENCE, MaskMode.INFERENCE, False),
    "mask_a": (MaskMode.MASK_A, MaskMode.INFERENCE, False),
    "mask_b": (MaskMode.MASK_B, MaskMode.INFERENCE, False),
    "input_aligned": (MaskMode.INFERENCE, MaskMode.INFERENCE, True),
    "input_unaligned": (MaskMode.FULL, MaskMode.FULL, False),
}


@dataclass
class ProposalSet:
    points: np.ndarray  # (M, P, 6) normalized
    offsets: np.ndarray  # (M, 4)
    classes: np.ndarray  # (M,), -1 unknown
    boxes: list[Box3D]
    gt_index: np.ndarray  # (M,) matched ground-truth proposal, -1 none
    eligible: np.ndarray  # (M,) correspondence-eligible (IoU >= 0.5)
    matches: list[ProposalMatch] = field(default_factory=list)


@dataclass
class SceneData:
    scene_id: str
    index: int
    gt: ProposalSet
    sem_roi: np.ndarray  # (M, L, R)
    sem_cls: np.ndarray  # (M, L, C)
    sem_geo: np.ndarray  # (M, L, 10)
    sem_count: np.ndarray  # (M,)
    record: SceneRecord
    detected: ProposalSet | None = None


@dataclass
class GroundingDataset:
    scenes: list[SceneData]
    queries: list[QueryRecord]
    query_scene: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    vocabulary: list[str]
    num_classes: int
    k_max: int
    roots: list[str]
    manifests: list[dict] = field(default_factory=list)

    @property
    def m_max(self) -> int:
        return max(len(s.gt.boxes) for s in self.scenes)


def _scene_rng(scene_id: str, salt: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(scene_id.encode()), salt])


def _proposal_set(props, scene: SceneRecord, n_points: int, salt: int) -> ProposalSet:
    rng = _scene_rng(scene.scene_id, salt)
    pts, offs = [], []
    for p in props:
        norm, offset = normalize_segment(p.segment, scene.scene_centroid)
        pts.append(resample_segment(norm, n_points, rng))
        offs.append(offset)
    m = len(props)
    return ProposalSet(
        points=np.stack(pts) if pts else np.zeros((0, n_points, 6)),
        offsets=np.stack(offs) if offs else np.zeros((0, 4)),
        classes=np.array([p.class_id for p in props], dtype=np.int64),
        boxes=[p.box3d for p in props],
        gt_index=np.arange(m),
        eligible=np.ones(m, dtype=bool),
    )


def detector_mode_pairing(gt_boxes: list[Box3D], detected: list[Box3D], threshold: float = 0.5):
    """Match detections to ground truth; returns (matches, gt_index per detection, eligibility)."""
    matches = match_proposals(detected, gt_boxes, threshold)
    gt_index = np.array([-1 if mt.gt_index is None else mt.gt_index for mt in matches], dtype=np.int64)
    eligible = np.array([mt.correspondence_eligible for mt in matches], dtype=bool)
    return matches, gt_index, eligible


def positive_for_target(detected: list[Box3D], target_box: Box3D) -> tuple[int, float]:
    """Detected proposal with the highest IoU against the target box (lowest index on ties)."""
    from .projection import iou3d

    ious = np.array([iou3d(b, target_box) for b in detected])
    k = int(np.argmax(ious))
    return k, float(ious[k])


def _scene_data(
    scene: SceneRecord,
    index: int,
    sems: list[Semantics2D],
    num_classes: int,
    n_points: int,
    roi_dim: int,
    detector: DetectorNoiseConfig | None,
) -> SceneData:
    m = len(scene.proposals)
    frames = max((r.frame_id for r in sems), default=-1) + 1
    frames = max(frames, len(scene.cameras), 1)
    roi = np.zeros((m, frames, roi_dim))
    cls = np.zeros((m, frames, num_classes))
    geo = np.zeros((m, frames, 10))
    count = np.zeros(m, dtype=np.int64)
    for r in sorted(sems, key=lambda r: (r.proposal_id, r.frame_id)):
        k = count[r.proposal_id]
        roi[r.proposal_id, k] = r.x_roi
        cls[r.proposal_id, k] = r.x_cls
        geo[r.proposal_id, k] = r.x_geo
        count[r.proposal_id] += 1
    data = SceneData(scene.scene_id, index, _proposal_set(scene.proposals, scene, n_points, 0), roi, cls, geo, count, scene)
    if detector is not None:
        det = perturb_proposals(scene, detector, zlib.crc32(scene.scene_id.encode()))
        ps = _proposal_set(det, scene, n_points, 1)
        if det:
            ps.matches, ps.gt_index, ps.eligible = detector_mode_pairing([p.box3d for p in scene.proposals], ps.boxes)
            ps.classes = np.where(ps.gt_index >= 0, data.gt.classes[np.maximum(ps.gt_index, 0)], -1)
        data.detected = ps
    return data


def load_dataset(
    roots: str | Path | list,
    n_points: int = 128,
    proposal_source: str = "ground_truth",
    detector: DetectorNoiseConfig | None = None,
    roi_dim: int = 32,
) -> GroundingDataset:
    """Load one or more dataset directories; several roots are concatenated."""
    if isinstance(roots, (str, Path)):
        roots = [roots]
    if proposal_source == "detector" and detector is None:
        detector = DetectorNoiseConfig()
    scenes: list[SceneData] = []
    queries: list[QueryRecord] = []
    train, val = [], []
    vocab = None
    manifests = []
    num_classes = k_max = 0
    for root in roots:
        root = Path(root)
        try:
            manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read dataset manifest in {root}: {exc}") from exc
        manifests.append(manifest)
        if vocab is None:
            vocab = manifest["vocabulary"]
        elif vocab != manifest["vocabulary"]:
            raise ValueError(f"dataset {root} has a different vocabulary; cannot concatenate")
        num_classes = max(num_classes, len(manifest["config"]["classes"]))
        k_max = max(k_max, int(manifest.get("k_max", 12)))
        split_of = {sid: name for name, ids in manifest["splits"].items() for sid in ids}
        sems: dict[str, list[Semantics2D]] = {}
        for d in read_jsonl(root / "semantics2d.jsonl"):
            sems.setdefault(d.pop("scene_id"), []).append(Semantics2D.from_json(d))
        by_id = {}
        for d in read_jsonl(root / "scenes.jsonl"):
            rec = SceneRecord.from_json(d)
            sd = _scene_data(
                rec,
                len(scenes),
                sems.get(rec.scene_id, []),
                num_classes,
                n_points,
                roi_dim,
                detector if proposal_source == "detector" else None,
            )
            by_id[rec.scene_id] = sd
            scenes.append(sd)
        for d in read_jsonl(root / "queries.jsonl"):
            q = QueryRecord.from_json(d)
            idx = len(queries)
            queries.append(q)
            (train if split_of[q.scene_id] == "train" else val).append((idx, by_id[q.scene_id].index))
    query_scene = np.zeros(len(queries), dtype=np.int64)
    for idx, s in train + val:
        query_scene[idx] = s
    return GroundingDataset(
        scenes=scenes,
        queries=queries,
        query_scene=query_scene,
        train_idx=np.array([i for i, _ in train], dtype=np.int64),
        val_idx=np.array([i for i, _ in val], dtype=np.int64),
        vocabulary=vocab or [],
        num_classes=num_classes,
        k_max=k_max,
        roots=[str(r) for r in roots],
        manifests=manifests,
    )


class FrameSampler:
    """Per-epoch frame choice keyed by (seed, epoch, scene, proposal)."""

    def __init__(self, seed: int, epoch: int):
        self.seed, self.epoch = seed, epoch
        self._cache: dict[tuple[int, int], int] = {}

    def __call__(self, scene_index: int, proposal_id: int, count: int) -> int:
        key = (scene_index, proposal_id)
        if key not in self._cache:
            rng = np.random.default_rng([self.seed, self.epoch, scene_index, proposal_id])
            self._cache[key] = int(rng.integers(count))
        return self._cache[key]


@dataclass
class BatchStats:
    skipped: list[str] = field(default_factory=list)
    missing_semantics: list[str] = field(default_factory=list)
    cor_exclusions: int = 0


def assemble_batch(
    dataset: GroundingDataset,
    indices,
    mode: str,
    sampler: FrameSampler | None = None,
    proposal_source: str = "ground_truth",
    dtype: torch.dtype = torch.float32,
    stats: BatchStats | None = None,
) -> Batch | None:
    """Build a padded Batch for the given query indices; ``sampler=None`` uses each proposal's first frame."""
    stats = stats if stats is not None else BatchStats()
    needs_2d = mode != "non_sat"
    rows = []
    for qi in indices:
        q = dataset.queries[int(qi)]
        sc = dataset.scenes[int(dataset.query_scene[int(qi)])]
        props = sc.gt if proposal_source == "ground_truth" else sc.detected
        if props is None or len(props.boxes) == 0:
            stats.skipped.append(q.query_id)
            log.info("skipping %s: no proposals", q.query_id)
            continue
        if proposal_source == "ground_truth":
            target = q.target_proposal_index
        else:
            target, best = positive_for_target(props.boxes, sc.gt.boxes[q.target_proposal_index])
            if best <= 0.0:
                stats.skipped.append(q.query_id)
                log.info("skipping %s: no detected proposal overlaps the target", q.query_id)
                continue
        m = len(props.boxes)
        gt_idx = props.gt_index
        has_2d = np.array([g >= 0 and sc.sem_count[g] > 0 for g in gt_idx])
        if needs_2d and proposal_source == "ground_truth" and not has_2d.all():
            stats.missing_semantics.append(q.query_id)
            log.warning("excluding %s: proposal without any 2D semantics record", q.query_id)
            continue
        roi = np.zeros((m, sc.sem_roi.shape[2]))
        cls = np.zeros((m, sc.sem_cls.shape[2]))
        geo = np.zeros((m, 10))
        if needs_2d:
            for k in range(m):
                if not has_2d[k]:
                    continue
                g = int(gt_idx[k])
                f = 0 if sampler is None else sampler(sc.index, g, int(sc.sem_count[g]))
                roi[k], cls[k], geo[k] = sc.sem_roi[g, f], sc.sem_cls[g, f], sc.sem_geo[g, f]
        eligible = props.eligible & has_2d
        if proposal_source == "detector":
            stats.cor_exclusions += int((~props.eligible).sum())
        rows.append((q, sc, props, target, roi, cls, geo, has_2d, eligible))
    if not rows:
        return None

    b = len(rows)
    k = max(len(r[0].tokens) for r in rows)
    m = max(len(r[2].boxes) for r in rows)
    p = rows[0][2].points.shape[1]
    c = rows[0][5].shape[1]
    rdim = rows[0][4].shape[1]
    tokens = np.zeros((b, k), dtype=np.int64)
    text_pad = np.ones((b, k + 1), dtype=bool)
    points = np.zeros((b, m, p, 6))
    offsets = np.zeros((b, m, 4))
    prop_pad = np.ones((b, m), dtype=bool)
    x_roi, x_cls, x_geo = np.zeros((b, m, rdim)), np.zeros((b, m, c)), np.zeros((b, m, 10))
    sem_pad = np.ones((b, m), dtype=bool)
    target = np.zeros(b, dtype=np.int64)
    target_cls = np.zeros(b, dtype=np.int64)
    prop_cls = np.full((b, m), -100, dtype=np.int64)
    eligible = np.zeros((b, m), dtype=bool)
    vg_i_ok = np.zeros(b, dtype=bool)
    boxes, gt_boxes = [], []
    for i, (q, sc, props, tgt, roi, cls, geo, has_2d, elig) in enumerate(rows):
        kk, mm = len(q.tokens), len(props.boxes)
        tokens[i, :kk] = q.tokens
        text_pad[i, : kk + 1] = False
        points[i, :mm] = props.points
        offsets[i, :mm] = props.offsets
        prop_pad[i, :mm] = False
        x_roi[i, :mm], x_cls[i, :mm], x_geo[i, :mm] = roi, cls, geo
        sem_pad[i, :mm] = ~has_2d
        target[i] = tgt
        target_cls[i] = q.target_class_id
        prop_cls[i, :mm] = np.where(props.classes >= 0, props.classes, -100)
        eligible[i, :mm] = elig
        vg_i_ok[i] = bool(has_2d[tgt] and elig[tgt]) if proposal_source == "detector" else bool(has_2d[tgt])
        boxes.append(props.boxes)
        gt_boxes.append(sc.gt.boxes[q.target_proposal_index])

    def f(a):
        return torch.as_tensor(a, dtype=dtype)

    return Batch(
        tokens=torch.as_tensor(tokens),
        text_pad=torch.as_tensor(text_pad),
        points=f(points),
        offsets=f(offsets),
        prop_pad=torch.as_tensor(prop_pad),
        x_roi=f(x_roi),
        x_cls=f(x_cls),
        x_geo=f(x_geo),
        sem_pad=torch.as_tensor(sem_pad),
        target=torch.as_tensor(target),
        target_cls=torch.as_tensor(target_cls),
        prop_cls=torch.as_tensor(prop_cls),
        cor_eligible=torch.as_tensor(eligible),
        vg_i_ok=torch.as_tensor(vg_i_ok),
        query_ids=[r[0].query_id for r in rows],
        boxes=boxes,
        gt_boxes=gt_boxes,
    )


def iter_batches(dataset: GroundingDataset, indices: np.ndarray, batch_size: int, mode: str, cfg: TrainConfig | None = None, **kw):
    for start in range(0, len(indices), batch_size):
        batch = assemble_batch(dataset, indices[start : start + batch_size], mode, **kw)
        if batch is not None:
            yield batch
