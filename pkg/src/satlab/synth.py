"""Procedural scenes, camera rings and template referring expressions.

Everything here is a pure function of ``(config, seed)``; ground truth (target,
distractors, spatial relations) is known by construction.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .config import ConfigError, SynthConfig, TemplateGrammar, canonical_json, config_hash, to_dict

log = logging.getLogger(__name__)

LENGTH_BUCKETS = ("2-6", "7-8", "9-10", "11-13", "14+")
SPATIAL_KEYWORDS = ("none", "closest", "farthest", "next-to", "left-of", "right-of", "corner")
PAD, UNK = "<pad>", "<unk>"
FLOAT_DECIMALS = 5


class NoValidQueryError(RuntimeError):
    """The scene admits no unambiguous query under the grammar."""


@dataclass
class Box3D:
    center: np.ndarray
    size: np.ndarray

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.size / 2

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.size / 2

    @classmethod
    def from_points(cls, xyz: np.ndarray) -> "Box3D":
        lo, hi = xyz.min(axis=0), xyz.max(axis=0)
        return cls((lo + hi) / 2, hi - lo)

    def to_json(self) -> dict[str, Any]:
        return {"center": _rounded(self.center), "size": _rounded(self.size)}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Box3D":
        return cls(np.array(d["center"], dtype=np.float64), np.array(d["size"], dtype=np.float64))


@dataclass
class ProposalRecord:
    proposal_id: int
    segment: np.ndarray  # P x 6
    class_id: int
    box3d: Box3D
    x_offset: np.ndarray  # (dx, dy, dz, r)
    color_tag: str
    is_ground_truth: bool = True

    def to_json(self) -> dict[str, Any]:
        return {
            "proposal_id": self.proposal_id,
            "segment": _rounded(self.segment),
            "class_id": self.class_id,
            "box3d": self.box3d.to_json(),
            "x_offset": _rounded(self.x_offset),
            "color_tag": self.color_tag,
            "is_ground_truth": self.is_ground_truth,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "ProposalRecord":
        return cls(
            proposal_id=int(d["proposal_id"]),
            segment=np.array(d["segment"], dtype=np.float64).reshape(-1, 6),
            class_id=int(d["class_id"]),
            box3d=Box3D.from_json(d["box3d"]),
            x_offset=np.array(d["x_offset"], dtype=np.float64),
            color_tag=d["color_tag"],
            is_ground_truth=bool(d["is_ground_truth"]),
        )


@dataclass
class CameraFrame:
    frame_id: int
    position: np.ndarray
    direction: np.ndarray
    focal: float
    principal: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        self.principal = np.asarray(self.principal, dtype=np.float64)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera width/height must be positive")

    def to_json(self) -> dict[str, Any]:
        return {
            "frame_id": self.frame_id,
            "position": self.position.tolist(),
            "direction": self.direction.tolist(),
            "focal": float(self.focal),
            "principal": self.principal.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "CameraFrame":
        return cls(
            frame_id=int(d["frame_id"]),
            position=np.array(d["position"], dtype=np.float64),
            direction=np.array(d["direction"], dtype=np.float64),
            focal=float(d["focal"]),
            principal=np.array(d["principal"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass
class SceneRecord:
    scene_id: str
    points: np.ndarray  # N x 6
    proposals: list[ProposalRecord]
    cameras: list[CameraFrame]
    scene_centroid: np.ndarray
    room_bounds: Box3D

    def to_json(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "points": _rounded(self.points),
            "proposals": [p.to_json() for p in self.proposals],
            "cameras": [c.to_json() for c in self.cameras],
            "scene_centroid": _rounded(self.scene_centroid),
            "room_bounds": self.room_bounds.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "SceneRecord":
        return cls(
            scene_id=d["scene_id"],
            points=np.array(d["points"], dtype=np.float64).reshape(-1, 6),
            proposals=[ProposalRecord.from_json(p) for p in d["proposals"]],
            cameras=[CameraFrame.from_json(c) for c in d["cameras"]],
            scene_centroid=np.array(d["scene_centroid"], dtype=np.float64),
            room_bounds=Box3D.from_json(d["room_bounds"]),
        )

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([p.class_id for p in self.proposals], dtype=np.int64)


@dataclass
class Facets:
    distractor_count: int
    length_bucket: str
    spatial_keyword: str


@dataclass
class QueryRecord:
    query_id: str
    scene_id: str
    tokens: list[int]
    target_proposal_index: int
    target_class_id: int
    facets: Facets
    text: str = ""
    anchor_proposal_index: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "scene_id": self.scene_id,
            "tokens": list(self.tokens),
            "target_proposal_index": self.target_proposal_index,
            "target_class_id": self.target_class_id,
            "facets": to_dict(self.facets),
            "text": self.text,
            "anchor_proposal_index": self.anchor_proposal_index,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "QueryRecord":
        return cls(
            query_id=d["query_id"],
            scene_id=d["scene_id"],
            tokens=[int(t) for t in d["tokens"]],
            target_proposal_index=int(d["target_proposal_index"]),
            target_class_id=int(d["target_class_id"]),
            facets=Facets(**d["facets"]),
            text=d.get("text", ""),
            anchor_proposal_index=d.get("anchor_proposal_index"),
        )


def _rounded(a: np.ndarray) -> list:
    return np.round(np.asarray(a, dtype=np.float64), FLOAT_DECIMALS).tolist()


def _round_array(a: np.ndarray) -> np.ndarray:
    # in-memory records carry exactly the values that get serialized
    return np.round(a, FLOAT_DECIMALS) + 0.0


def length_bucket(k: int) -> str:
    if k < 2:
        raise ValueError(f"query length {k} < 2")
    if k <= 6:
        return "2-6"
    if k <= 8:
        return "7-8"
    if k <= 10:
        return "9-10"
    if k <= 13:
        return "11-13"
    return "14+"


# ---------------------------------------------------------------- geometry


def _sample_surface(kind: str, half: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "box":
        areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        areas = np.repeat(areas, 2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        uv[np.arange(n), axis] = sign
        return uv * half
    if kind == "cylinder":
        side = np.pi * (half[0] + half[1]) * 2 * half[2]
        cap = np.pi * half[0] * half[1]
        on_side = rng.uniform(size=n) < side / (side + 2 * cap)
        theta = rng.uniform(0, 2 * np.pi, size=n)
        rad = np.where(on_side, 1.0, np.sqrt(rng.uniform(size=n)))
        z = np.where(on_side, rng.uniform(-1, 1, size=n), np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0))
        return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1) * half
    if kind == "ellipsoid":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * half
    raise ConfigError(f"unknown shape kind {kind!r}")


def _camera_ring(cfg: SynthConfig) -> list[CameraFrame]:
    w, d, _ = cfg.room_size
    center = np.array([w / 2, d / 2, 0.6])
    width, height = cfg.image_size
    cams = []
    for l in range(cfg.num_cameras):
        ang = 2 * np.pi * l / cfg.num_cameras + np.pi / 4
        pos = np.array([w / 2 + cfg.camera_radius * np.cos(ang), d / 2 + cfg.camera_radius * np.sin(ang), cfg.camera_height])
        direction = center - pos
        direction /= np.linalg.norm(direction)
        cams.append(CameraFrame(l, pos, direction, cfg.focal, np.array([width / 2, height / 2]), width, height))
    return cams


def _build_proposal(
    idx: int, class_id: int, color: str, center_xy: np.ndarray, cfg: SynthConfig, rng: np.random.Generator
) -> tuple[np.ndarray, str]:
    shape = cfg.classes[class_id]
    size = np.array(shape.size) * rng.uniform(1 - cfg.size_jitter, 1 + cfg.size_jitter, size=3)
    if rng.uniform() < 0.5:
        size[[0, 1]] = size[[1, 0]]
    n = int(rng.integers(cfg.min_points, cfg.max_points + 1))
    local = _sample_surface(shape.kind, size / 2, n, rng)
    center = np.array([center_xy[0], center_xy[1], size[2] / 2])
    xyz = local + center + rng.normal(scale=cfg.point_noise, size=(n, 3))
    hi = np.array(cfg.room_size)
    xyz = np.clip(xyz, 0.0, hi)
    rgb = np.clip(np.array(cfg.colors[color]) + rng.normal(scale=cfg.color_noise, size=(n, 3)), 0.0, 1.0)
    return np.concatenate([xyz, rgb], axis=1), color


def generate_scene(config: SynthConfig, seed: int, scene_id: str | None = None) -> SceneRecord:
    """Generate one room with M parametric objects and an L-camera ring."""
    from .projection import visibility_fraction

    config.validate()
    rng = np.random.default_rng(seed)
    scene_id = scene_id or f"scene-{seed}"
    room = Box3D(np.array(config.room_size) / 2, np.array(config.room_size))
    cams = _camera_ring(config)
    colors = sorted(config.colors)

    foot = max(max(c.size[0], c.size[1]) for c in config.classes) * (1 + config.size_jitter)
    nx, ny = int(config.room_size[0] // foot), int(config.room_size[1] // foot)
    cell_w, cell_d = config.room_size[0] / nx, config.room_size[1] / ny

    for _ in range(config.max_attempts):
        m = int(rng.integers(config.min_proposals, config.max_proposals + 1))
        focus = int(rng.integers(config.num_classes))
        hi_d = min(config.max_distractors, m - 1)
        if hi_d < config.min_distractors:
            continue
        n_focus = 1 + int(rng.integers(config.min_distractors, hi_d + 1))
        others = [c for c in range(config.num_classes) if c != focus]
        classes = [focus] * n_focus + [int(c) for c in rng.choice(others, size=m - n_focus)]
        classes = [classes[i] for i in rng.permutation(m)]
        cells = rng.choice(nx * ny, size=m, replace=False)

        segments, tags = [], []
        for i, (cls, cell) in enumerate(zip(classes, cells)):
            shape = config.classes[cls]
            ext = max(shape.size[0], shape.size[1]) * (1 + config.size_jitter)
            slack_x, slack_y = max(cell_w - ext, 0) / 2, max(cell_d - ext, 0) / 2
            cx = (cell % nx + 0.5) * cell_w + rng.uniform(-slack_x, slack_x)
            cy = (cell // nx + 0.5) * cell_d + rng.uniform(-slack_y, slack_y)
            color = colors[int(rng.integers(len(colors)))]
            seg, tag = _build_proposal(i, cls, color, np.array([cx, cy]), config, rng)
            segments.append(_round_array(seg))
            tags.append(tag)

        floor = np.zeros((config.floor_points, 6))
        floor[:, 0] = rng.uniform(0, config.room_size[0], config.floor_points)
        floor[:, 1] = rng.uniform(0, config.room_size[1], config.floor_points)
        floor[:, 3:] = 0.5
        points = np.concatenate(segments + [_round_array(floor)], axis=0)
        centroid = _round_array(points[:, :3].mean(axis=0))

        proposals = []
        for i, (seg, tag, cls) in enumerate(zip(segments, tags, classes)):
            xyz = seg[:, :3]
            c = xyz.mean(axis=0)
            r = float(np.linalg.norm(xyz - c, axis=1).max())
            if r == 0.0:
                r = 1.0
            offset = _round_array(np.concatenate([c - centroid, [r]]))
            proposals.append(ProposalRecord(i, seg, cls, Box3D.from_points(xyz), offset, tag))

        if all(max(visibility_fraction(p.segment[:, :3], cam) for cam in cams) > 0.2 for p in proposals):
            return SceneRecord(scene_id, points, proposals, cams, centroid, room)
    raise ConfigError(f"could not generate a valid scene in {config.max_attempts} attempts (seed {seed})")


# ---------------------------------------------------------------- language


def build_vocabulary(config: SynthConfig, grammar: TemplateGrammar) -> list[str]:
    words: set[str] = set()
    for phrase in grammar.prefixes + grammar.suffixes:
        words.update(phrase.split())
    for fam in SPATIAL_KEYWORDS:
        for tpl in _PHRASINGS.get(fam, ()):
            words.update(w for w in tpl.split() if not w.startswith("{"))
    words.update(c.name for c in config.classes)
    words.update(config.colors)
    return [PAD, UNK] + sorted(words)


_PHRASINGS = {
    "color": ("the {color} {cls}",),
    "closest": ("the {cls} closest to the {anchor}", "the {cls} that is closest to the {anchor}"),
    "farthest": ("the {cls} farthest from the {anchor}", "the {cls} that is farthest from the {anchor}"),
    "next-to": ("the {cls} next to the {anchor}", "the {cls} that is next to the {anchor}"),
    "left-of": ("the {cls} on the left of the {anchor}", "the {cls} to the left of the {anchor}"),
    "right-of": ("the {cls} on the right of the {anchor}", "the {cls} to the right of the {anchor}"),
    "corner": ("the {cls} in the corner", "the {cls} in the corner of the room"),
}


def _centers(scene: SceneRecord) -> np.ndarray:
    return np.stack([p.box3d.center for p in scene.proposals])


def corner_distance(center: np.ndarray, room: Box3D) -> float:
    corners = [(room.lo[0], room.lo[1]), (room.lo[0], room.hi[1]), (room.hi[0], room.lo[1]), (room.hi[0], room.hi[1])]
    return min(float(np.hypot(center[0] - x, center[1] - y)) for x, y in corners)


def _unique_by_threshold(values: np.ndarray, radius: float, margin: float) -> int | None:
    inside = values < radius
    if inside.sum() == 1 and np.all(values[~inside] >= radius + margin):
        return int(np.flatnonzero(inside)[0])
    return None


def query_candidates(scene: SceneRecord, grammar: TemplateGrammar) -> dict[str, list[tuple[int, int | None]]]:
    """All unambiguous (target, anchor) pairs per template family, in index order."""
    classes = scene.class_ids
    centers = _centers(scene)
    counts = np.bincount(classes)
    out: dict[str, list[tuple[int, int | None]]] = {f: [] for f in grammar.families}
    multi = [c for c in range(len(counts)) if 2 <= counts[c] <= 7]
    singles = [c for c in range(len(counts)) if counts[c] == 1]
    for c in multi:
        members = np.flatnonzero(classes == c)
        if "color" in out:
            tags = [scene.proposals[i].color_tag for i in members]
            for i, tag in zip(members, tags):
                if tags.count(tag) == 1:
                    out["color"].append((int(i), None))
        if "corner" in out:
            cd = np.array([corner_distance(centers[i], scene.room_bounds) for i in members])
            hit = _unique_by_threshold(cd, grammar.corner_radius, grammar.distance_margin)
            if hit is not None:
                out["corner"].append((int(members[hit]), None))
        for a_cls in singles:
            a = int(np.flatnonzero(classes == a_cls)[0])
            dist = np.linalg.norm(centers[members] - centers[a], axis=1)
            order = np.argsort(dist, kind="stable")
            if "closest" in out and dist[order[1]] - dist[order[0]] >= grammar.distance_margin:
                out["closest"].append((int(members[order[0]]), a))
            if "farthest" in out and dist[order[-1]] - dist[order[-2]] >= grammar.distance_margin:
                out["farthest"].append((int(members[order[-1]]), a))
            if "next-to" in out:
                hit = _unique_by_threshold(dist, grammar.next_to_radius, grammar.distance_margin)
                if hit is not None:
                    out["next-to"].append((int(members[hit]), a))
            dx = centers[members, 0] - centers[a, 0]
            for fam, side in (("left-of", dx < -grammar.axis_margin), ("right-of", dx > grammar.axis_margin)):
                if fam not in out:
                    continue
                other = dx > grammar.axis_margin if fam == "left-of" else dx < -grammar.axis_margin
                if side.sum() == 1 and np.all(side | other):
                    out[fam].append((int(members[np.flatnonzero(side)[0]]), a))
    return out


def generate_query(
    scene: SceneRecord,
    grammar: TemplateGrammar,
    seed: int,
    config: SynthConfig | None = None,
    vocab: list[str] | None = None,
    k_max: int = 12,
    query_id: str | None = None,
) -> QueryRecord:
    """Sample one unambiguous template query about ``scene``."""
    config = config or SynthConfig()
    vocab = vocab or build_vocabulary(config, grammar)
    index = {w: i for i, w in enumerate(vocab)}
    rng = np.random.default_rng(seed)
    cands = {f: v for f, v in query_candidates(scene, grammar).items() if v}
    if not cands:
        raise NoValidQueryError(f"scene {scene.scene_id} admits no unambiguous query")
    fams = [f for f in grammar.families if f in cands]
    for _ in range(20):
        fam = fams[int(rng.integers(len(fams)))]
        target, anchor = cands[fam][int(rng.integers(len(cands[fam])))]
        prop = scene.proposals[target]
        core = _PHRASINGS[fam][int(rng.integers(len(_PHRASINGS[fam])))]
        text = core.format(
            color=prop.color_tag,
            cls=config.classes[prop.class_id].name,
            anchor=config.classes[scene.proposals[anchor].class_id].name if anchor is not None else "",
        )
        prefix = grammar.prefixes[int(rng.integers(len(grammar.prefixes)))]
        suffix = grammar.suffixes[int(rng.integers(len(grammar.suffixes)))] if "room" not in text else ""
        words = " ".join(s for s in (prefix, text, suffix) if s).split()
        if len(words) <= k_max:
            break
    else:
        raise NoValidQueryError(f"no template expansion of scene {scene.scene_id} fits k_max={k_max}")
    tokens = [index.get(w, index[UNK]) for w in words]
    n_same = int((scene.class_ids == prop.class_id).sum())
    facets = Facets(
        distractor_count=n_same - 1,
        length_bucket=length_bucket(len(tokens)),
        spatial_keyword="none" if fam == "color" else fam,
    )
    return QueryRecord(
        query_id=query_id or f"{scene.scene_id}-q{seed}",
        scene_id=scene.scene_id,
        tokens=tokens,
        target_proposal_index=target,
        target_class_id=prop.class_id,
        facets=facets,
        text=" ".join(words),
        anchor_proposal_index=anchor,
    )


# ---------------------------------------------------------------- dataset files


@dataclass
class DatasetManifest:
    config: dict[str, Any]
    grammar: dict[str, Any]
    seed: int
    config_hash: str
    counts: dict[str, int]
    splits: dict[str, list[str]]
    vocabulary: list[str]
    k_max: int = 12

    def to_json(self) -> dict[str, Any]:
        return to_dict(self)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _scene_with_queries(
    config: SynthConfig, grammar: TemplateGrammar, vocab: list[str], seed: int, index: int, k_max: int
) -> tuple[SceneRecord, list[QueryRecord]]:
    scene_id = f"scene{index:05d}"
    for attempt in range(config.max_attempts):
        scene = generate_scene(config, _derive_seed(seed, index, attempt), scene_id=scene_id)
        queries: list[QueryRecord] = []
        seen: set[tuple[int, ...]] = set()
        for q in range(config.queries_per_scene * 4):
            try:
                rec = generate_query(scene, grammar, _derive_seed(seed, index, attempt, q + 1), config, vocab, k_max)
            except NoValidQueryError:
                break
            key = tuple(rec.tokens)
            if key in seen:
                continue
            seen.add(key)
            rec.query_id = f"{scene_id}-q{len(queries)}"
            queries.append(rec)
            if len(queries) == config.queries_per_scene:
                break
        if queries:
            return scene, queries
    raise ConfigError(f"scene {index}: no scene with a valid query after {config.max_attempts} attempts")


def iter_scenes(
    config: SynthConfig, grammar: TemplateGrammar, seed: int, k_max: int = 12
) -> Iterator[tuple[SceneRecord, list[QueryRecord]]]:
    vocab = build_vocabulary(config, grammar)
    for index in range(config.train_scenes + config.val_scenes):
        yield _scene_with_queries(config, grammar, vocab, seed, index, k_max)


def _dump_line(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True) + "\n"


def build_dataset(
    config: SynthConfig,
    seed: int,
    out_dir: str | Path,
    grammar: TemplateGrammar | None = None,
    k_max: int = 12,
) -> DatasetManifest:
    """Write manifest.json, scenes.jsonl, queries.jsonl and semantics2d.jsonl to ``out_dir``."""
    from .projection import scene_semantics

    config.validate()
    grammar = grammar or TemplateGrammar()
    vocab = build_vocabulary(config, grammar)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    splits: dict[str, list[str]] = {"train": [], "val": []}
    n_queries = n_sem = 0
    paths = {k: out / f"{k}.jsonl" for k in ("scenes", "queries", "semantics2d")}
    try:
        with paths["scenes"].open("w", encoding="utf-8") as fs, paths["queries"].open(
            "w", encoding="utf-8"
        ) as fq, paths["semantics2d"].open("w", encoding="utf-8") as f2:
            for index, (scene, queries) in enumerate(iter_scenes(config, grammar, seed, k_max)):
                splits["train" if index < config.train_scenes else "val"].append(scene.scene_id)
                fs.write(_dump_line(scene.to_json()))
                for q in queries:
                    fq.write(_dump_line(q.to_json()))
                n_queries += len(queries)
                for rec in scene_semantics(scene, config.num_classes):
                    f2.write(_dump_line({"scene_id": scene.scene_id, **rec.to_json()}))
                    n_sem += 1
    except OSError as exc:
        raise OSError(f"failed writing dataset files under {out}: {exc}") from exc

    manifest = DatasetManifest(
        config=to_dict(config),
        grammar=to_dict(grammar),
        seed=seed,
        config_hash=config_hash(config),
        counts={
            "scenes": len(splits["train"]) + len(splits["val"]),
            "train_scenes": len(splits["train"]),
            "val_scenes": len(splits["val"]),
            "queries": n_queries,
            "semantics2d": n_sem,
        },
        splits=splits,
        vocabulary=vocab,
        k_max=k_max,
    )
    try:
        (out / "manifest.json").write_text(
            json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise OSError(f"failed writing {out / 'manifest.json'}: {exc}") from exc
    return manifest


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    try:
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def dataset_digest(out_dir: str | Path) -> str:
    h = hashlib.sha256()
    for name in ("manifest.json", "scenes.jsonl", "queries.jsonl", "semantics2d.jsonl"):
        h.update((Path(out_dir) / name).read_bytes())
    return h.hexdigest()


__all__ = [
    "Box3D",
    "CameraFrame",
    "DatasetManifest",
    "Facets",
    "NoValidQueryError",
    "ProposalRecord",
    "QueryRecord",
    "SceneRecord",
    "build_dataset",
    "build_vocabulary",
    "canonical_json",
    "generate_query",
    "generate_scene",
    "length_bucket",
    "query_candidates",
]
