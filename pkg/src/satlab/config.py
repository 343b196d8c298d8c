"""Configuration dataclasses, JSON round-tripping and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch


class ConfigError(ValueError):
    """Raised for unsatisfiable or malformed configuration."""


@dataclass
class ClassShape:
    name: str
    kind: str  # box | cylinder | ellipsoid
    size: tuple[float, float, float]  # full extents (x, y, z) in meters


DEFAULT_CLASSES = [
    ClassShape("chair", "box", (0.5, 0.5, 0.9)),
    ClassShape("table", "box", (1.2, 0.8, 0.75)),
    ClassShape("lamp", "cylinder", (0.3, 0.3, 1.5)),
    ClassShape("bin", "cylinder", (0.4, 0.4, 0.55)),
    ClassShape("pillow", "ellipsoid", (0.55, 0.4, 0.2)),
    ClassShape("box", "box", (0.45, 0.45, 0.45)),
    ClassShape("monitor", "box", (0.6, 0.12, 0.4)),
    ClassShape("ball", "ellipsoid", (0.35, 0.35, 0.35)),
]

DEFAULT_COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.15),
    "white": (0.92, 0.92, 0.92),
    "black": (0.1, 0.1, 0.1),
}


@dataclass
class SynthConfig:
    classes: list[ClassShape] = field(default_factory=lambda: list(DEFAULT_CLASSES))
    colors: dict[str, tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_COLORS))
    min_proposals: int = 6
    max_proposals: int = 6
    min_points: int = 128
    max_points: int = 128
    room_size: tuple[float, float, float] = (6.0, 6.0, 3.0)
    num_cameras: int = 4
    camera_height: float = 2.4
    camera_radius: float = 5.5
    focal: float = 160.0
    image_size: tuple[int, int] = (320, 240)
    min_distractors: int = 1
    max_distractors: int = 6
    size_jitter: float = 0.25
    point_noise: float = 0.03
    color_noise: float = 0.06
    floor_points: int = 256
    queries_per_scene: int = 4
    train_scenes: int = 400
    val_scenes: int = 100
    max_attempts: int = 50

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 object classes")
        if len(self.colors) < 2:
            raise ConfigError("need at least 2 colors")
        if not 2 <= self.min_proposals <= self.max_proposals:
            raise ConfigError(
                f"proposal range [{self.min_proposals}, {self.max_proposals}] violates 2 <= min <= max"
            )
        if not 1 <= self.min_distractors <= self.max_distractors <= 6:
            raise ConfigError(
                f"distractor range [{self.min_distractors}, {self.max_distractors}] violates 1 <= min <= max <= 6"
            )
        if self.min_distractors + 1 > self.max_proposals:
            raise ConfigError(
                f"min_distractors={self.min_distractors} requires at least "
                f"{self.min_distractors + 1} proposals but max_proposals={self.max_proposals}"
            )
        if not 1 <= self.min_points <= self.max_points:
            raise ConfigError("points-per-object range must satisfy 1 <= min <= max")
        if self.num_cameras < 1:
            raise ConfigError("num_cameras must be >= 1")
        if any(s <= 0 for s in self.room_size):
            raise ConfigError("room_size entries must be positive")
        if self.queries_per_scene < 1:
            raise ConfigError("queries_per_scene must be >= 1")
        if self.train_scenes < 1 or self.val_scenes < 0:
            raise ConfigError("need train_scenes >= 1 and val_scenes >= 0")
        # every object needs its own floor cell; the largest footprint bounds packing
        foot = max(max(c.size[0], c.size[1]) for c in self.classes) * (1 + self.size_jitter)
        cells = int(self.room_size[0] // foot) * int(self.room_size[1] // foot)
        if cells < self.max_proposals:
            raise ConfigError(
                f"room {self.room_size[:2]} cannot hold {self.max_proposals} objects of footprint {foot:.2f} m"
            )


@dataclass
class TemplateGrammar:
    families: tuple[str, ...] = ("color", "closest", "farthest", "next-to", "left-of", "right-of", "corner")
    prefixes: tuple[str, ...] = ("", "find", "select", "look at", "pick")
    suffixes: tuple[str, ...] = ("", "in the room", "in this room")
    distance_margin: float = 0.4
    next_to_radius: float = 1.4
    corner_radius: float = 1.6
    axis_margin: float = 0.15


@dataclass
class DetectorNoiseConfig:
    center_sigma: float = 0.08
    size_sigma: float = 0.12
    drop_prob: float = 0.05
    spurious: int = 1


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    text_layers: int = 2
    fusion_layers: int = 2
    hidden: int = 64  # per-point MLP width
    p: int = 64  # pooled point-feature width
    points: int = 128
    k_max: int = 12
    m_max: int = 8
    num_classes: int = 8
    roi_dim: int = 32
    vocab_size: int = 64
    dropout: float = 0.1
    type_embeddings: bool = True
    precision: str = "single"

    def validate(self) -> None:
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be single|double, got {self.precision!r}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "double" else torch.float32


# recorded for documentation; desk defaults above are what actually runs
PAPER_MODEL = dict(d=768, text_layers=3, fusion_layers=4, points=1024)


@dataclass
class LossConfig:
    w_cor: float = 10.0
    w_cls: float = 0.5
    alpha: float = 0.1
    vg_i: bool = True
    cor: bool = True
    cls: bool = True

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ConfigError("margin alpha must be > 0")
        if self.w_cor < 0 or self.w_cls < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class SemanticsFlags:
    roi: bool = True
    cls: bool = True
    geo: bool = True

    def any(self) -> bool:
        return self.roi or self.cls or self.geo


MODES = ("sat", "non_sat", "mask_a", "mask_b", "input_aligned", "input_unaligned")


@dataclass
class TrainConfig:
    mode: str = "sat"
    epochs: int = 30
    batch_size: int = 16
    lr0: float = 1e-4
    decay_factor: float = 0.65
    decay_every: int = 10
    seed: int = 0
    proposal_source: str = "ground_truth"
    log_every: int = 20
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    semantics: SemanticsFlags = field(default_factory=SemanticsFlags)
    detector: DetectorNoiseConfig = field(default_factory=DetectorNoiseConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.proposal_source not in ("ground_truth", "detector"):
            raise ConfigError(f"unknown proposal_source {self.proposal_source!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.uses_semantics and not self.semantics.any():
            raise ConfigError("2D semantics enabled but all use flags (roi, cls, geo) are false")
        self.loss.validate()
        self.model.validate()

    @property
    def uses_semantics(self) -> bool:
        return self.mode != "non_sat"

    def effective_loss(self) -> LossConfig:
        """Loss enablement implied by the mode."""
        lc = dataclasses.replace(self.loss)
        if self.mode in ("non_sat", "input_aligned"):
            lc.vg_i = False
            lc.cor = False
        return lc


@dataclass
class ProbeConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0


# ---------------------------------------------------------------- serialization


def to_dict(cfg: Any) -> Any:
    if dataclasses.is_dataclass(cfg):
        return {f.name: to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, (list, tuple)):
        return [to_dict(v) for v in cfg]
    if isinstance(cfg, dict):
        return {k: to_dict(v) for k, v in cfg.items()}
    return cfg


def _coerce(tp: Any, value: Any) -> Any:
    if isinstance(tp, str):
        tp = eval(tp, globals())  # noqa: S307 - annotations of this module only
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value)
    origin = getattr(tp, "__origin__", None)
    args = getattr(tp, "__args__", ())
    if origin is tuple:
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in value)
        return tuple(_coerce(a, v) for a, v in zip(args, value))
    if origin is list:
        return [_coerce(args[0], v) for v in value]
    if origin is dict:
        return {k: _coerce(args[1], v) for k, v in value.items()}
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_dict(cls: type, data: dict[str, Any]) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: _coerce(names[k].type, v) for k, v in data.items()}
    return cls(**kwargs)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``a.b.c=value`` overrides to a nested dict (values parsed as JSON when possible)."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _parse_value(raw)
    return out


def load_config(cls: type, path: str | Path | None = None, overrides: list[str] | None = None) -> Any:
    base = to_dict(cls())
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        base = _merge(base, loaded)
    base = apply_overrides(base, overrides or [])
    cfg = from_dict(cls, base)
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


def _merge(base: dict[str, Any], new: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "colors":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def canonical_json(obj: Any) -> str:
    return json.dumps(to_dict(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Any) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:16]


def env_precision(default: str = "single") -> str:
    value = os.environ.get("SATLAB_PRECISION", default)
    if value not in ("single", "double"):
        raise ConfigError(f"SATLAB_PRECISION must be single|double, got {value!r}")
    return value
