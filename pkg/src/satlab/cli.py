"""Command-line entry point: gen, train, eval, probe, ablate, gradcheck.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 run failure, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import (
    ConfigError,
    ProbeConfig,
    SynthConfig,
    TemplateGrammar,
    TrainConfig,
    apply_overrides,
    env_precision,
    from_dict,
    to_dict,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUN, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("satlab")


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _merge(base: dict, new: dict) -> dict:
    out = dict(base)
    for k, v in new.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _echo(out: Path, name: str, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_train_config(args) -> TrainConfig:
    data = _merge(to_dict(TrainConfig()), _read_json(args.config))
    data["model"]["precision"] = env_precision(data["model"].get("precision", "single"))
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    data = apply_overrides(data, args.set)
    cfg = from_dict(TrainConfig, data)
    cfg.validate()
    return cfg


def _load(args, cfg: TrainConfig | None = None):
    from .data import load_dataset

    kw = {}
    if cfg is not None:
        kw = dict(n_points=cfg.model.points, proposal_source=cfg.proposal_source, detector=cfg.detector,
                  roi_dim=cfg.model.roi_dim)
    return load_dataset(args.data, **kw)


# ---------------------------------------------------------------- commands


def run_gen(args) -> int:
    from .synth import build_dataset

    raw = apply_overrides(_read_json(args.config), args.set)
    grammar = from_dict(TemplateGrammar, _merge(to_dict(TemplateGrammar()), raw.pop("grammar", {})))
    k_max = int(raw.pop("k_max", 12))
    synth = from_dict(SynthConfig, _merge(to_dict(SynthConfig()), raw))
    synth.validate()
    out = Path(args.out)
    _echo(out, "gen_config.json", {"synth": to_dict(synth), "grammar": to_dict(grammar), "k_max": k_max, "seed": args.seed})
    manifest = build_dataset(synth, args.seed, out, grammar, k_max)
    print(f"wrote {sum(manifest.counts.values()) if manifest.counts else 0} records to {out}")
    return EXIT_OK


def run_train(args) -> int:
    from .training import train

    cfg = resolve_train_config(args)
    out = Path(args.out)
    _echo(out, "config.json", to_dict(cfg))
    ds = _load(args, cfg)
    res = train(ds, cfg, out)
    print(f"mode={cfg.mode} seed={cfg.seed} final_val={res.final_val:.4f} best_val={res.best_val:.4f} "
          f"(epoch {res.best_epoch}) wall={res.log.wall_clock:.1f}s")
    return EXIT_OK


def run_eval(args) -> int:
    from .checkpoint import load_model
    from .evaluation import evaluate

    model, header = load_model(args.checkpoint)
    meta = header["meta"]
    mode = args.mode or meta.get("mode", "sat")
    out = Path(args.out)
    _echo(out, "eval_config.json", {"checkpoint": str(args.checkpoint), "data": args.data, "mode": mode,
                                    "proposal_source": args.proposal_source, "model": header["model"]})
    cfg = TrainConfig(mode=mode, proposal_source=args.proposal_source, model=from_dict(type(model.cfg), header["model"]))
    ds = _load(args, cfg)
    report = evaluate(model, ds, mode, args.proposal_source, Path(args.checkpoint).read_bytes())
    report.write(out, chart=args.chart)
    print(f"accuracy={report.overall_accuracy:.4f} n={report.n_samples}"
          + "".join(f" acc@{k}={v:.4f}" for k, v in report.acc_at_iou.items()))
    return EXIT_OK


def run_probe(args) -> int:
    from .checkpoint import load_model
    from .evaluation import linear_probe
    from .training import make_model

    pdata = apply_overrides(_merge(to_dict(ProbeConfig()), _read_json(args.config)), args.set)
    if args.seed is not None:
        pdata["seed"] = args.seed
    pcfg = from_dict(ProbeConfig, pdata)
    if args.checkpoint:
        model, header = load_model(args.checkpoint)
        source = str(args.checkpoint)
    else:
        model = make_model(TrainConfig(seed=pcfg.seed, model=from_dict(type(TrainConfig().model), {
            **to_dict(TrainConfig().model), "precision": env_precision()})))
        source = f"random-init(seed={pcfg.seed})"
    out = Path(args.out)
    _echo(out, "probe_config.json", {"probe": to_dict(pcfg), "checkpoint": source, "data": args.data})
    ds = _load(args, TrainConfig(model=model.cfg))
    res = linear_probe(model, ds, pcfg)
    (out / "probe.json").write_text(json.dumps({"top1": res.top1, "train_top1": res.train_top1, "chance": res.chance,
                                                "backbone_digest": res.digest_after, "checkpoint": source},
                                               indent=2, sort_keys=True) + "\n")
    print(f"probe top1={res.top1:.4f} (majority-class chance {res.chance:.4f})")
    return EXIT_OK


def run_ablate(args) -> int:
    from .ablation import run_suite

    cfg = resolve_train_config(args)
    out = Path(args.out)
    _echo(out, "config.json", {"suite": args.suite, "seeds": args.seeds, "base": to_dict(cfg)})
    ds = _load(args, cfg)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    results = run_suite(ds, args.suite, cfg, seeds, out)
    for r in results:
        print(f"{r.label:12s} {100 * r.mean:6.2f} +- {100 * r.std:.2f}")
    return EXIT_OK


def run_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    results = run_all(seed=args.seed or 0, n_samples=args.samples, corrupt=args.corrupt)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{r.component:12s} max_rel_error={r.max_rel_error:.3e} n={r.n_checked} "
              f"{'ok' if r.passed else 'FAIL'} worst={r.worst_parameter}")
    if args.out:
        _echo(Path(args.out), "gradcheck.json", {"seed": args.seed or 0, "results": [
            {"component": r.component, "max_rel_error": r.max_rel_error, "worst_parameter": r.worst_parameter,
             "n_checked": r.n_checked, "passed": r.passed} for r in results]})
    if failed:
        for r in failed:
            print(f"gradient check failed for {r.component} at parameter {r.worst_parameter} "
                  f"(relative error {r.max_rel_error:.3e} >= {TOLERANCE})", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satlab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out_required=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-key override")
        if data:
            sp.add_argument("--data", action="append", required=True, help="dataset directory (repeatable)")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g, data=False)
    g.set_defaults(func=run_gen, seed=0)

    t = sub.add_parser("train", help="train one model")
    common(t)
    t.add_argument("--mode", choices=["sat", "non_sat", "mask_a", "mask_b", "input_aligned", "input_unaligned"])
    t.set_defaults(func=run_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", default=None)
    e.add_argument("--proposal-source", default="ground_truth", choices=["ground_truth", "detector"])
    e.add_argument("--chart", action="store_true", help="also write per-facet bar charts")
    e.set_defaults(func=run_eval)

    pr = sub.add_parser("probe", help="linear probe on frozen proposal features")
    common(pr)
    pr.add_argument("--checkpoint", help="omit to probe a randomly initialised network")
    pr.set_defaults(func=run_probe)

    a = sub.add_parser("ablate", help="run an ablation suite over several seeds")
    common(a)
    a.add_argument("--suite", required=True, choices=["masks", "semantics", "losses", "oracles"])
    a.add_argument("--seeds", type=int, default=3)
    a.set_defaults(func=run_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out", default=None)
    gc.add_argument("--samples", type=int, default=50)
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(func=run_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .training import TrainingAborted

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingAborted, RuntimeError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
