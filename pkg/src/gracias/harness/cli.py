"""Command line entry point: ``gracias <subcommand> --config cfg.json``.

Exit status: 0 success, 2 configuration error, 3 threshold failure in
``eval --assert``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..defense import DefenseConfig
from ..grassmann import verify_bound
from ..model import TrainConfig, accuracy, init_params, load_checkpoint, predict, save_checkpoint, train_sgd
from ..rng import Xoshiro256, sub_seed
from .analysis import bench_defense, pair_distance_histogram
from .data import FormatError, write_grct
from .experiment import (
    AttackSpec,
    ConfigError,
    ExperimentSpec,
    build_defense,
    check_schema,
    check_thresholds,
    load_dataset,
    run_attack,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3
log = logging.getLogger("gracias")


def _load_config(args) -> tuple[dict, Path]:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    check_schema(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        raise ConfigError("missing seed: set it in the config or pass --seed")
    if args.out is not None:
        cfg.setdefault("output", {})["dir"] = str(Path(args.out).resolve())
    return cfg, path.parent


def _out_dir(cfg: dict, base: Path) -> Path:
    out = base / cfg.get("output", {}).get("dir", "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _model(cfg: dict, base: Path):
    model = cfg.get("model") or {}
    if "checkpoint" not in model:
        raise ConfigError("missing model.checkpoint")
    path = base / model["checkpoint"]
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    params, _ = load_checkpoint(path)
    return params


def _attack_spec(cfg: dict) -> AttackSpec:
    try:
        return AttackSpec(**cfg.get("attack", {"kind": "none"}))
    except TypeError as exc:
        raise ConfigError(f"bad attack section: {exc}") from exc


def cmd_train(cfg: dict, base: Path, args) -> int:
    ds = load_dataset(cfg.get("dataset", {}), base)
    model = cfg.get("model") or {}
    if "checkpoint" not in model:
        raise ConfigError("missing model.checkpoint")
    arch = model.get("architecture", "linear")
    try:
        tc = TrainConfig(**{**cfg.get("train", {}), "seed": cfg["seed"]})
        params = init_params(arch, ds.images.shape[1:], ds.class_count, seed=cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    params, trace = train_sgd(params, ds.images, ds.labels, tc)
    ckpt = base / model["checkpoint"]
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, params, seed=cfg["seed"])
    summary = {"checkpoint": str(ckpt), "loss_trace": trace.tolist(), "train_accuracy": accuracy(params, ds.images, ds.labels)}
    _write_json(_out_dir(cfg, base) / "train.json", summary)
    log.info("trained %s: train accuracy %.4f", arch, summary["train_accuracy"])
    return EXIT_OK


def _parallel(fn, n: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def cmd_attack(cfg: dict, base: Path, args) -> int:
    params = _model(cfg, base)
    ds = load_dataset(cfg.get("dataset", {}), base)
    spec = _attack_spec(cfg)
    defense = build_defense(cfg.get("defense", []))
    seed = cfg["seed"]

    def work(i):
        x, y = ds.images[i], int(ds.labels[i])
        adv = run_attack(params, defense, x, y, spec, sub_seed(sub_seed(seed, i), 0))
        return adv, {
            "index": i,
            "label": y,
            "clean": int(predict(params, x)),
            "adversarial": int(predict(params, adv)),
            "linf": float(np.max(np.abs(adv - x))),
            "attack": spec.kind,
        }

    results = _parallel(work, len(ds), args.threads)
    out = _out_dir(cfg, base)
    write_grct(out / "adversarial.grct", np.stack([r[0] for r in results]) if results else np.zeros((0,)))
    write_grct(out / "labels.grct", ds.labels.astype(np.float64))
    with open(out / "attacks.jsonl", "w") as fh:
        for _, rec in results:
            rec["success"] = rec["adversarial"] != rec["label"]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_defend(cfg: dict, base: Path, args) -> int:
    ds = load_dataset(cfg.get("dataset", {}), base)
    defense = build_defense(cfg.get("defense", []))
    seed = cfg["seed"]
    images = _parallel(lambda i: defense(ds.images[i], Xoshiro256(sub_seed(seed, i))), len(ds), args.threads)
    out = _out_dir(cfg, base)
    write_grct(out / "defended.grct", np.stack(images) if images else np.zeros((0,)))
    return EXIT_OK


def cmd_eval(cfg: dict, base: Path, args) -> int:
    spec = ExperimentSpec.from_dict(cfg, base)
    report = run_experiment(spec, threads=args.threads, base=base)
    for key, value in report.summary().items():
        print(f"{key}: {value}")
    if args.assert_thresholds:
        failures = check_thresholds(report, spec.thresholds)
        for f in failures:
            print(f"FAIL {f}")
        if failures:
            return EXIT_ASSERT
    return EXIT_OK


def cmd_histogram(cfg: dict, base: Path, args) -> int:
    params = _model(cfg, base)
    ds = load_dataset(cfg.get("dataset", {}), base)
    hist = cfg.get("histogram", {})
    try:
        dcfg = DefenseConfig(**cfg.get("defense_params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad defense_params: {exc}") from exc
    report = pair_distance_histogram(
        params,
        ds,
        _attack_spec(cfg),
        dcfg,
        pairs=int(hist.get("pairs", 200)),
        dim=int(hist.get("dim", 5)),
        bins=int(hist.get("bins", 20)),
        seed=cfg["seed"],
    )
    _write_json(_out_dir(cfg, base) / "histogram.json", report.to_dict(with_values=True))
    print(f"same mean {report.same_mean:.4f}  cross mean {report.cross_mean:.4f}  excluded {report.excluded}")
    return EXIT_OK


def cmd_verify_bound(cfg: dict, base: Path, args) -> int:
    geometry = {"height": 8, "width": 8, "channels": 1, "k": 12, "kernel_size": 3, **cfg.get("geometry", {})}
    eps = float(cfg.get("eps", 8.0)) / 255.0
    report = verify_bound(int(cfg.get("trials", 1000)), geometry, eps, seed=cfg["seed"])
    _write_json(_out_dir(cfg, base) / "bound.json", report.to_dict(with_records=bool(cfg.get("records", False))))
    print(
        f"trials {report.trials}  degenerate {report.degenerate}  "
        f"violations (squared) {report.violations_squared}  (literal) {report.violations_literal}"
    )
    return EXIT_OK


def cmd_bench(cfg: dict, base: Path, args) -> int:
    b = cfg.get("bench", {})
    report = bench_defense(
        image_size=int(b.get("image_size", 64)),
        k=int(b.get("k", 60)),
        repeats=int(b.get("repeats", 20)),
        channels=int(b.get("channels", 3)),
        seed=cfg["seed"],
    )
    _write_json(_out_dir(cfg, base) / "bench.json", report)
    if report.get("median_ms") is not None:
        print(f"median {report['median_ms']:.2f} ms  p95 {report['p95_ms']:.2f} ms")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "eval": cmd_eval,
    "histogram": cmd_histogram,
    "verify-bound": cmd_verify_bound,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gracias", description="Randomised-subspace defense laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment description")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for per-image work")
        if name == "eval":
            p.add_argument("--assert", dest="assert_thresholds", action="store_true", help="exit 3 if a threshold in the config's 'assert' section fails")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, base = _load_config(args)
        return COMMANDS[args.command](cfg, base, args)
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
