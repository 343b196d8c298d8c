"""Pinhole projection into camera frames, 2D semantics records and 3D box matching."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import DetectorNoiseConfig
from .synth import Box3D, CameraFrame, ProposalRecord, SceneRecord

log = logging.getLogger(__name__)

ROI_DIM = 32
GEO_DIM = 10
VISIBILITY_THRESHOLD = 0.2
_NEAR = 1e-9


@dataclass
class Semantics2D:
    proposal_id: int
    frame_id: int
    x_roi: np.ndarray
    x_cls: np.ndarray
    x_geo: np.ndarray
    visibility: float

    def to_json(self) -> dict[str, Any]:
        return {
            "proposal_id": self.proposal_id,
            "frame_id": self.frame_id,
            "x_roi": np.round(self.x_roi, 6).tolist(),
            "x_cls": self.x_cls.astype(int).tolist(),
            "x_geo": np.round(self.x_geo, 6).tolist(),
            "visibility": round(float(self.visibility), 6),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Semantics2D":
        return cls(
            proposal_id=int(d["proposal_id"]),
            frame_id=int(d["frame_id"]),
            x_roi=np.array(d["x_roi"], dtype=np.float64),
            x_cls=np.array(d["x_cls"], dtype=np.float64),
            x_geo=np.array(d["x_geo"], dtype=np.float64),
            visibility=float(d["visibility"]),
        )


@dataclass
class ProposalMatch:
    detected_index: int
    gt_index: int | None
    iou: float
    correspondence_eligible: bool


def camera_basis(camera: CameraFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fwd = camera.direction / np.linalg.norm(camera.direction)
    right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(right) < 1e-12:
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    return right, up, fwd


def project_points(points: np.ndarray, camera: CameraFrame) -> tuple[np.ndarray, np.ndarray]:
    """Project P x 3 world points; pixels of points behind the camera are NaN."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    right, up, fwd = camera_basis(camera)
    rel = pts - camera.position
    xc, yc, zc = rel @ right, rel @ up, rel @ fwd
    front = zc > _NEAR
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, camera.principal[0] + camera.focal * xc / np.where(front, zc, 1.0), np.nan)
        v = np.where(front, camera.principal[1] - camera.focal * yc / np.where(front, zc, 1.0), np.nan)
    inside = front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    return np.stack([u, v], axis=1), inside


def visibility_fraction(points: np.ndarray, camera: CameraFrame) -> float:
    if len(points) == 0:
        return 0.0
    _, vis = project_points(points, camera)
    return float(vis.mean())


def roi_descriptor(rgb: np.ndarray, box: np.ndarray, visibility: float, camera: CameraFrame) -> np.ndarray:
    """32-d stand-in region feature: 8-bin/channel color histogram, mean color, box shape, visibility."""
    hist = [np.histogram(rgb[:, c], bins=8, range=(0.0, 1.0))[0] / len(rgb) for c in range(3)]
    w = (box[2] - box[0]) * camera.width
    h = (box[3] - box[1]) * camera.height
    area = (box[2] - box[0]) * (box[3] - box[1])
    aspect = w / max(h, 1e-6)
    return np.concatenate(hist + [rgb.mean(axis=0), [area, aspect, visibility, 0.0, 0.0]])


def make_semantics_record(
    scene: SceneRecord, proposal_id: int, frame_id: int, num_classes: int | None = None
) -> Semantics2D | None:
    """2D semantics of one proposal in one frame, or None when visibility <= 0.2."""
    if not 0 <= proposal_id < len(scene.proposals):
        raise KeyError(f"scene {scene.scene_id} has no proposal {proposal_id}")
    cams = {c.frame_id: c for c in scene.cameras}
    if frame_id not in cams:
        raise KeyError(f"scene {scene.scene_id} has no frame {frame_id}")
    prop, cam = scene.proposals[proposal_id], cams[frame_id]
    if num_classes is None:
        num_classes = int(max(p.class_id for p in scene.proposals)) + 1
    pix, vis = project_points(prop.segment[:, :3], cam)
    visibility = float(vis.mean())
    if visibility <= VISIBILITY_THRESHOLD:
        return None
    pv = pix[vis]
    box = np.array(
        [pv[:, 0].min() / cam.width, pv[:, 1].min() / cam.height, pv[:, 0].max() / cam.width, pv[:, 1].max() / cam.height]
    )
    x_cls = np.zeros(num_classes)
    x_cls[prop.class_id] = 1.0
    x_geo = np.concatenate([box, cam.position, cam.direction])
    x_roi = roi_descriptor(prop.segment[vis, 3:], box, visibility, cam)
    return Semantics2D(proposal_id, frame_id, x_roi, x_cls, x_geo, visibility)


def scene_semantics(scene: SceneRecord, num_classes: int) -> list[Semantics2D]:
    out = []
    for p in scene.proposals:
        for cam in scene.cameras:
            rec = make_semantics_record(scene, p.proposal_id, cam.frame_id, num_classes)
            if rec is not None:
                out.append(rec)
    return out


# ---------------------------------------------------------------- 3D boxes


def _check_box(b: Box3D) -> None:
    if np.any(b.size <= 0):
        raise ValueError(f"box sizes must be positive, got {b.size.tolist()}")


def iou3d(a: Box3D, b: Box3D) -> float:
    """Axis-aligned intersection-over-union."""
    _check_box(a)
    _check_box(b)
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    inter = float(np.prod(np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)))
    va, vb = float(np.prod(ahi - alo)), float(np.prod(bhi - blo))
    return inter / (va + vb - inter)


def iou_matrix(detected: list[Box3D], ground_truth: list[Box3D]) -> np.ndarray:
    return np.array([[iou3d(d, g) for g in ground_truth] for d in detected]).reshape(len(detected), len(ground_truth))


def match_proposals(detected: list[Box3D], ground_truth: list[Box3D], threshold: float = 0.5) -> list[ProposalMatch]:
    """Pair each detected box with its max-IoU ground-truth box (ties -> lowest index)."""
    if not detected or not ground_truth:
        raise ValueError("match_proposals needs non-empty detected and ground_truth lists")
    mat = iou_matrix(detected, ground_truth)
    out = []
    for i, row in enumerate(mat):
        g = int(np.argmax(row))
        iou = float(row[g])
        out.append(ProposalMatch(i, g if iou > 0 else None, iou, iou >= threshold))
    return out


def perturb_proposals(scene: SceneRecord, noise: DetectorNoiseConfig, seed: int) -> list[ProposalRecord]:
    """Emulate detector output: jittered, dropped and spurious proposals."""
    rng = np.random.default_rng(seed)
    room_hi = scene.room_bounds.hi
    out: list[ProposalRecord] = []
    exact = noise.center_sigma == 0 and noise.size_sigma == 0
    for p in scene.proposals:
        if rng.uniform() < noise.drop_prob:
            continue
        if exact:
            box = Box3D(p.box3d.center, p.box3d.size)
            out.append(ProposalRecord(len(out), p.segment.copy(), p.class_id, box, p.x_offset.copy(), p.color_tag, False))
            continue
        shift = rng.normal(scale=noise.center_sigma, size=3)
        scale = np.exp(rng.normal(scale=noise.size_sigma, size=3))
        seg = p.segment.copy()
        c = p.box3d.center
        seg[:, :3] = np.clip((seg[:, :3] - c) * scale + c + shift, 0.0, room_hi)
        out.append(_as_proposal(len(out), seg, p.class_id, p.color_tag, scene))
    for _ in range(noise.spurious):
        size = rng.uniform(0.3, 1.0, size=3)
        center = rng.uniform(size / 2, room_hi - size / 2)
        lo, hi = center - size / 2, center + size / 2
        inside = np.all((scene.points[:, :3] >= lo) & (scene.points[:, :3] <= hi), axis=1)
        seg = scene.points[inside]
        if len(seg) < 8:
            n = 64
            seg = np.concatenate([rng.uniform(lo, hi, size=(n, 3)), np.full((n, 3), 0.5)], axis=1)
        out.append(_as_proposal(len(out), seg, -1, "none", scene))
    if not out:
        log.warning("detector emulation produced no proposals for scene %s (degenerate output)", scene.scene_id)
    return out


def _as_proposal(idx: int, seg: np.ndarray, class_id: int, color: str, scene: SceneRecord) -> ProposalRecord:
    xyz = seg[:, :3]
    c = xyz.mean(axis=0)
    r = float(np.linalg.norm(xyz - c, axis=1).max()) or 1.0
    box = Box3D.from_points(xyz)
    box.size = np.maximum(box.size, 1e-3)
    return ProposalRecord(idx, seg, class_id, box, np.concatenate([c - scene.scene_centroid, [r]]), color, False)
