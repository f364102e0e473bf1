"""Same-sample vs cross-class subspace distances, and defense timing."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..defense import DefenseConfig, KernelBank, bank_from_kernels, gracias_defend, identity, sample_kernel
from ..grassmann import GrassmannPoint, bank_basis, normalized_geodesic
from ..model import ClassifierParams
from ..rng import Xoshiro256, sub_seed
from ..tensor import numerical_rank
from .data import Dataset
from .experiment import AttackSpec, run_attack


@dataclass
class HistogramReport:
    pairs: int
    dim: int
    bins: list[float]  # edges on [0, 1]
    same_mass: list[float]
    cross_mass: list[float]
    same_mean: float | None
    cross_mean: float | None
    same_stderr: float | None
    cross_stderr: float | None
    excluded: int
    same: list[float] = field(default_factory=list)
    cross: list[float] = field(default_factory=list)

    @property
    def gap_in_stderr(self) -> float:
        """(cross mean - same mean) over the standard error of that difference."""
        se = np.hypot(self.same_stderr, self.cross_stderr)
        return float((self.cross_mean - self.same_mean) / se) if se > 0 else float("inf")

    def to_dict(self, with_values: bool = False) -> dict:
        out = asdict(self)
        if not with_values:
            out.pop("same")
            out.pop("cross")
        return out


def _masses(values: list[float], edges: np.ndarray) -> list[float]:
    if not values:
        return [0.0] * (len(edges) - 1)
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
    return (counts / counts.sum()).tolist()


def _stats(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    v = np.asarray(values)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def pair_distance_histogram(
    params: ClassifierParams,
    dataset: Dataset,
    attack: AttackSpec,
    defense_config: DefenseConfig = DefenseConfig(),
    pairs: int = 200,
    dim: int = 5,
    bins: int = 20,
    seed: int = 0,
) -> HistogramReport:
    """Normalised geodesic distances of uncentred bank subspaces.

    Pair ``j`` picks an image x with label y, attacks it to x_adv, and picks a
    clean x' with a different label.  One kernel bank is drawn per pair and
    shared by all three images.  Reported are d(x, x_adv) ("same") and
    d(x', x_adv) ("cross"), both truncated to ``dim`` leading directions.
    Pairs where any bank has rank below ``dim`` are excluded and counted.
    """
    if pairs < 2:
        raise ValueError(f"need at least two pairs, got {pairs}")
    labels = dataset.labels
    if len(np.unique(labels)) < 2:
        raise ValueError("dataset needs at least two classes")
    same, cross = [], []
    excluded = 0
    for j in range(pairs):
        rng = Xoshiro256(sub_seed(seed, j))
        i = rng.integers(0, len(dataset) - 1)
        x, y = dataset.images[i], int(labels[i])
        others = np.flatnonzero(labels != y)
        x_other = dataset.images[others[rng.integers(0, len(others) - 1)]]
        x_adv = run_attack(params, identity, x, y, attack, rng.next_u64())
        size = defense_config.kernel_size_for(x.shape)
        k = rng.integers(defense_config.k_min, defense_config.k_max)
        kernels = KernelBank(np.stack([sample_kernel(size, rng) for _ in range(k)]))
        bases = []
        for img in (x, x_adv, x_other):
            u, s = bank_basis(bank_from_kernels(img, kernels))
            bases.append(u[:, :dim] if numerical_rank(s) >= dim else None)
        if any(b is None for b in bases):
            excluded += 1
            continue
        clean, adv, other = (GrassmannPoint(b) for b in bases)
        same.append(normalized_geodesic(clean, adv))
        cross.append(normalized_geodesic(other, adv))
    edges = np.linspace(0.0, 1.0, bins + 1)
    sm, sse = _stats(same)
    cm, cse = _stats(cross)
    return HistogramReport(
        pairs=pairs,
        dim=dim,
        bins=edges.tolist(),
        same_mass=_masses(same, edges),
        cross_mass=_masses(cross, edges),
        same_mean=sm,
        cross_mean=cm,
        same_stderr=sse,
        cross_stderr=cse,
        excluded=excluded,
        same=same,
        cross=cross,
    )


def bench_defense(image_size: int = 64, k: int = 60, repeats: int = 20, channels: int = 3, seed: int = 0) -> dict:
    """Wall-clock statistics (milliseconds) of ``gracias_defend`` with k fixed."""
    report = {"image_size": image_size, "channels": channels, "k": k, "repeats": max(repeats, 0), "timings_ms": []}
    if repeats <= 0:
        return report
    rng = Xoshiro256(seed)
    x = rng.uniform_array(image_size * image_size * channels).reshape(image_size, image_size, channels)
    config = DefenseConfig(k_min=k, k_max=k)
    gracias_defend(x, config, rng)  # warm-up (JIT caches, allocator)
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        gracias_defend(x, config, rng)
        timings.append(1000.0 * (time.perf_counter() - start))
    report["timings_ms"] = timings
    report["median_ms"] = float(np.median(timings))
    report["p95_ms"] = float(np.percentile(timings, 95))
    return report
