"""Experiment specs and the clean / attacked / defended evaluation loop.

Per-image randomness is derived from the master seed only, never from the
worker that happens to process the image:

    root_i   = sub_seed(master, i)
    attack   = sub_seed(root_i, 0)      (seed of the attacker's own defense draws)
    defense  = sub_seed(root_i, 1), sub_seed(root_i, 2)   (clean / attacked input)
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..attacks import AttackConfig, bpda_attack, eot_pgd, fgsm, pgd
from ..defense import Defense, DefenseConfig, bitdepth, chain, gracias, identity
from ..model import ClassifierParams, load_checkpoint, predict
from ..rng import Xoshiro256, sub_seed
from .data import Dataset, gen_synthetic, load_idx, read_grct

SCHEMA_VERSION = 1
ATTACK_KINDS = ("none", "fgsm", "pgd", "bpda", "eot")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "pgd"
    eps: float = 16.0  # 0-255 scale
    eps_step: float = 2.0  # 0-255 scale
    iters: int = 40
    eot_samples: int = 10

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")

    def config(self, seed: int) -> AttackConfig:
        step = min(self.eps_step, self.eps)
        return AttackConfig.from_255(self.eps, step, iters=self.iters, eot_samples=self.eot_samples, seed=seed)


def build_defense(stages: list[dict] | None) -> Defense:
    """Defense pipeline from its JSON description, e.g. ``[{"type": "gracias"}, {"type": "bitdepth", "bits": 3}]``."""
    if not stages:
        return identity
    built = []
    for stage in stages:
        stage = dict(stage)
        kind = stage.pop("type", None)
        try:
            if kind == "gracias":
                built.append(gracias(DefenseConfig(**stage)))
            elif kind == "bitdepth":
                built.append(bitdepth(int(stage.get("bits", 3))))
            elif kind == "identity":
                built.append(identity)
            else:
                raise ConfigError(f"unknown defense stage {kind!r}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad {kind} stage: {exc}") from exc
    return built[0] if len(built) == 1 else chain(built)


def run_attack(params: ClassifierParams, defense: Defense, x, y: int, spec: AttackSpec, seed: int) -> np.ndarray:
    if spec.kind == "none" or spec.eps == 0.0:
        return np.array(x, dtype=np.float64, copy=True)
    cfg = spec.config(seed)
    if spec.kind == "fgsm":
        return fgsm(params, x, y, cfg.eps).adversarial
    if spec.kind == "pgd":
        return pgd(params, x, y, cfg).adversarial
    if spec.kind == "bpda":
        return bpda_attack(params, defense, x, y, cfg).adversarial
    return eot_pgd(params, defense, x, y, cfg).adversarial


@dataclass
class ImageRecord:
    index: int
    label: int
    clean: int
    attacked: int
    defended_clean: int
    defended_attacked: int
    linf: float


RECORD_FIELDS = ("index", "label", "clean", "attacked", "defended_clean", "defended_attacked", "linf")
ACCURACY_FIELDS = ("clean_accuracy", "attacked_accuracy", "defended_clean_accuracy", "defended_attacked_accuracy")


@dataclass
class MetricsReport:
    count: int
    clean_accuracy: float
    attacked_accuracy: float
    defended_clean_accuracy: float
    defended_attacked_accuracy: float
    records: list[ImageRecord] = field(default_factory=list)
    runtime_seconds: float = 0.0  # not part of the deterministic encodings

    @classmethod
    def from_records(cls, records: list[ImageRecord], runtime: float = 0.0) -> "MetricsReport":
        n = len(records)

        def frac(key):
            return sum(getattr(r, key) == r.label for r in records) / n if n else 0.0

        return cls(
            count=n,
            clean_accuracy=frac("clean"),
            attacked_accuracy=frac("attacked"),
            defended_clean_accuracy=frac("defended_clean"),
            defended_attacked_accuracy=frac("defended_attacked"),
            records=list(records),
            runtime_seconds=runtime,
        )

    def summary(self) -> dict:
        return {"count": self.count, **{k: getattr(self, k) for k in ACCURACY_FIELDS}}

    def to_json(self, extra: dict | None = None) -> str:
        body = {**(extra or {}), "metrics": self.summary(), "records": [asdict(r) for r in self.records]}
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in self.records:
            writer.writerow([getattr(r, f) if f != "linf" else repr(r.linf) for f in RECORD_FIELDS])
        return buf.getvalue()


def evaluate_image(params, defense: Defense, attack: AttackSpec, x, y: int, index: int, master_seed: int) -> ImageRecord:
    root = sub_seed(master_seed, index)
    x_adv = run_attack(params, defense, x, y, attack, sub_seed(root, 0))
    dc = defense(x, Xoshiro256(sub_seed(root, 1)))
    da = defense(x_adv, Xoshiro256(sub_seed(root, 2)))
    preds = predict(params, np.stack([x, x_adv, dc, da]))
    return ImageRecord(
        index=index,
        label=int(y),
        clean=int(preds[0]),
        attacked=int(preds[1]),
        defended_clean=int(preds[2]),
        defended_attacked=int(preds[3]),
        linf=float(np.max(np.abs(x_adv - x))),
    )


def evaluate(
    params: ClassifierParams,
    dataset: Dataset,
    defense: Defense,
    attack: AttackSpec,
    seed: int,
    threads: int = 1,
) -> MetricsReport:
    """Clean, attacked, defended-clean and defended-attacked predictions for every image."""
    start = time.perf_counter()

    def work(i):
        try:
            return evaluate_image(params, defense, attack, dataset.images[i], int(dataset.labels[i]), i, seed)
        except Exception as exc:
            raise RuntimeError(f"evaluation failed on image {i}: {exc}") from exc

    indices = range(len(dataset))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, indices))
    else:
        records = [work(i) for i in indices]
    return MetricsReport.from_records(records, time.perf_counter() - start)


def _require(cfg: dict, key: str, where: str) -> Any:
    if key not in cfg:
        raise ConfigError(f"missing {where}.{key}")
    return cfg[key]


def load_dataset(cfg: dict, base: Path = Path(".")) -> Dataset:
    source = cfg.get("source", "synthetic")
    if source == "synthetic":
        opts = {k: v for k, v in cfg.items() if k not in ("source", "limit")}
        try:
            ds = gen_synthetic(**opts)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic dataset options: {exc}") from exc
    elif source == "idx":
        images = base / _require(cfg, "images", "dataset")
        labels = base / _require(cfg, "labels", "dataset")
        for p in (images, labels):
            if not p.exists():
                raise ConfigError(f"dataset file not found: {p}")
        ds = load_idx(images, labels, cfg.get("class_count"))
    elif source == "grct":
        images = base / _require(cfg, "images", "dataset")
        labels = base / _require(cfg, "labels", "dataset")
        for p in (images, labels):
            if not p.exists():
                raise ConfigError(f"dataset file not found: {p}")
        lab = read_grct(labels).astype(np.int64)
        ds = Dataset(read_grct(images), lab, images.stem, int(cfg.get("class_count", lab.max() + 1)))
    else:
        raise ConfigError(f"unknown dataset source {source!r}")
    limit = cfg.get("limit")
    if limit is not None:
        ds = ds.subset(np.arange(min(int(limit), len(ds))))
    return ds


@dataclass
class ExperimentSpec:
    """One fully specified evaluation run (the ``eval`` config file)."""

    checkpoint: Path
    dataset: dict
    defense: list[dict]
    attack: AttackSpec
    seed: int
    out_dir: Path
    images: int | None = None
    thresholds: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict, base: Path = Path(".")) -> "ExperimentSpec":
        check_schema(cfg)
        if "seed" not in cfg:
            raise ConfigError("missing seed (no implicit entropy)")
        model = _require(cfg, "model", "config")
        ckpt = base / _require(model, "checkpoint", "model")
        if not ckpt.exists():
            raise ConfigError(f"checkpoint not found: {ckpt}")
        try:
            attack = AttackSpec(**cfg.get("attack", {"kind": "none"}))
        except TypeError as exc:
            raise ConfigError(f"bad attack section: {exc}") from exc
        build_defense(cfg.get("defense", []))  # validate early
        return cls(
            checkpoint=ckpt,
            dataset=dict(_require(cfg, "dataset", "config")),
            defense=list(cfg.get("defense", [])),
            attack=attack,
            seed=int(cfg["seed"]),
            out_dir=base / cfg.get("output", {}).get("dir", "out"),
            images=cfg.get("trials", {}).get("images"),
            thresholds=dict(cfg.get("assert", {})),
            raw=cfg,
        )


def check_schema(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")


def run_experiment(spec: ExperimentSpec, threads: int = 1, base: Path = Path(".")) -> MetricsReport:
    """Evaluate, then write ``report.json``, ``records.csv`` and ``timing.json`` to ``spec.out_dir``."""
    params, _ = load_checkpoint(spec.checkpoint)
    ds = load_dataset(spec.dataset, base)
    if spec.images is not None:
        ds = ds.subset(np.arange(min(int(spec.images), len(ds))))
    if tuple(ds.images.shape[1:]) != params.input_shape:
        raise ConfigError(f"dataset images {ds.images.shape[1:]} do not fit model input {params.input_shape}")
    report = evaluate(params, ds, build_defense(spec.defense), spec.attack, spec.seed, threads)
    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "schema_version": SCHEMA_VERSION,
        "seed": spec.seed,
        "dataset": ds.name,
        "attack": asdict(spec.attack),
        "defense": spec.defense,
    }
    (out / "report.json").write_text(report.to_json(extra))
    (out / "records.csv").write_text(report.to_csv())
    (out / "timing.json").write_text(json.dumps({"runtime_seconds": report.runtime_seconds, "threads": threads}) + "\n")
    return report


def check_thresholds(report: MetricsReport, thresholds: dict) -> list[str]:
    """Failed threshold descriptions.  Keys look like ``<accuracy field>_min`` / ``_max``."""
    failures = []
    summary = report.summary()
    for key, bound in sorted(thresholds.items()):
        name, _, kind = key.rpartition("_")
        if name not in summary or kind not in ("min", "max"):
            raise ConfigError(f"unknown threshold {key!r}")
        value = summary[name]
        if (kind == "min" and value < bound) or (kind == "max" and value > bound):
            failures.append(f"{name}={value:.4f} violates {kind} {bound}")
    return failures
