"""Ablation suites: named groups of training configurations compared over several seeds."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigError, SemanticsFlags, TrainConfig, to_dict
from .data import GroundingDataset
from .evaluation import mean_std

log = logging.getLogger(__name__)


def _variant(base: TrainConfig, mode: str, semantics: SemanticsFlags | None = None, **loss_flags) -> TrainConfig:
    cfg = dataclasses.replace(base, mode=mode, semantics=semantics or dataclasses.replace(base.semantics),
                              loss=dataclasses.replace(base.loss, **loss_flags))
    return cfg


def suite_members(suite: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """(row label, config) pairs for one suite."""
    S = SemanticsFlags
    if suite == "masks":
        return [(m, _variant(base, m)) for m in ("non_sat", "mask_a", "mask_b", "sat")]
    if suite == "semantics":
        return [
            ("a_none", _variant(base, "non_sat")),
            ("b_geo", _variant(base, "sat", S(roi=False, cls=False, geo=True))),
            ("c_geo_cls", _variant(base, "sat", S(roi=False, cls=True, geo=True))),
            ("d_geo_roi", _variant(base, "sat", S(roi=True, cls=False, geo=True))),
            ("e_cls_roi", _variant(base, "sat", S(roi=True, cls=True, geo=False))),
            ("f_all", _variant(base, "sat", S(roi=True, cls=True, geo=True))),
        ]
    if suite == "losses":
        rows = [("a_vg_o", False, False, False), ("b_cls", True, False, False), ("c_cls_vg_i", True, True, False),
                ("d_cls_cor", True, False, True), ("e_vg_i_cor", False, True, True), ("f_all", True, True, True)]
        return [(n, _variant(base, "sat", cls=c, vg_i=v, cor=r)) for n, c, v, r in rows]
    if suite == "oracles":
        return [(m, _variant(base, m)) for m in ("input_aligned", "input_unaligned", "sat", "non_sat")]
    raise ConfigError(f"unknown ablation suite {suite!r}; expected masks, semantics, losses or oracles")


SUITES = ("masks", "semantics", "losses", "oracles")


@dataclass
class MemberResult:
    label: str
    accuracies: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return mean_std(self.accuracies)[1]


def run_suite(
    dataset: GroundingDataset,
    suite: str,
    base: TrainConfig,
    seeds: list[int],
    out_dir: str | Path | None = None,
) -> list[MemberResult]:
    """Train every member for every seed; accuracy is the final-epoch val accuracy."""
    from .training import train

    results = []
    for label, cfg in suite_members(suite, base):
        res = MemberResult(label)
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed)
            sub = None if out_dir is None else Path(out_dir) / label / f"seed{seed}"
            if sub is not None:
                sub.mkdir(parents=True, exist_ok=True)
                (sub / "config.json").write_text(json.dumps(to_dict(run_cfg), indent=2, sort_keys=True) + "\n")
            r = train(dataset, run_cfg, sub)
            res.accuracies.append(r.final_val)
            res.seeds.append(seed)
            log.info("%s/%s seed %d: %.4f", suite, label, seed, r.final_val)
        results.append(res)
    if out_dir is not None:
        write_table(results, Path(out_dir) / f"{suite}.csv")
    return results


def write_table(results: list[MemberResult], path: Path) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "mean_accuracy", "std_accuracy", "n_seeds", "per_seed"])
            for r in results:
                w.writerow([r.label, f"{r.mean:.6f}", f"{r.std:.6f}", len(r.accuracies),
                            " ".join(f"{a:.6f}" for a in r.accuracies)])
    except OSError as exc:
        raise OSError(f"cannot write ablation table {path}: {exc}") from exc
